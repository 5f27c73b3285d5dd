use opcc::envs::{ChainWorld, LEFT, RIGHT};

/// Transition matrix of the chain rule written out by hand: the intended move succeeds with
/// probability `p`, otherwise the agent stays; walls and absorbing cells keep the agent in place.
pub fn chain_matrix(n: usize, p: f64, absorbing: &[usize], action: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for s in 0..n {
        if absorbing.contains(&s) {
            m[s][s] = 1.0;
            continue;
        }
        let target = if action == RIGHT {
            (s + 1).min(n - 1)
        } else {
            s.saturating_sub(1)
        };
        m[s][target] += p;
        m[s][s] += 1.0 - p;
    }
    m
}

/// Matrix backward induction `v_t = r_pi + gamma P_pi v_{t+1}` for a state-independent policy
/// that moves right with probability `bias`.
pub fn backward_induction(env: &ChainWorld, bias: f64, gamma: f64, h: usize) -> Vec<f64> {
    let n = env.n_states;
    let left = chain_matrix(n, env.p_advance, &env.absorbing_states, LEFT);
    let right = chain_matrix(n, env.p_advance, &env.absorbing_states, RIGHT);
    let mut v = vec![0.0; n];
    for _ in 0..h {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let r = (1.0 - bias) * env.reward_table[s][LEFT] + bias * env.reward_table[s][RIGHT];
            let mut ev = 0.0;
            for (t, vt) in v.iter().enumerate() {
                ev += ((1.0 - bias) * left[s][t] + bias * right[s][t]) * vt;
            }
            next[s] = r + gamma * ev;
        }
        v = next;
    }
    v
}
