use std::sync::Arc;

use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::mdp::{EnvAction, EnvState, Environment, Policy, SharedPolicy, StepOutcome, TabularMdp};
use crate::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A stochastic corridor of `n_states` cells with actions left/right. The intended move
/// succeeds with probability `p_advance`, otherwise the agent stays put. Absorbing and
/// terminal states self-loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainWorld {
    pub n_states: usize,
    pub p_advance: f64,
    /// `reward_table[s] = [R(s, left), R(s, right)]`.
    pub reward_table: Vec<[f64; 2]>,
    #[serde(default)]
    pub terminal_states: Vec<usize>,
    #[serde(default)]
    pub absorbing_states: Vec<usize>,
    #[serde(default)]
    pub start_state: usize,
    pub max_steps: usize,
}

impl ChainWorld {
    /// Sparse goal chain: the last cell is absorbing and pays 1 per step spent there.
    pub fn goal_chain(n_states: usize, p_advance: f64, max_steps: usize) -> Self {
        let mut reward_table = vec![[0.0, 0.0]; n_states];
        reward_table[n_states - 1] = [1.0, 1.0];
        Self {
            n_states,
            p_advance,
            reward_table,
            terminal_states: vec![],
            absorbing_states: vec![n_states - 1],
            start_state: 0,
            max_steps,
        }
    }

    /// Every state-action pair pays 1.
    pub fn unit_reward(n_states: usize, p_advance: f64, max_steps: usize) -> Self {
        Self {
            n_states,
            p_advance,
            reward_table: vec![[1.0, 1.0]; n_states],
            terminal_states: vec![],
            absorbing_states: vec![],
            start_state: 0,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.max_steps == 0 {
            return Err(Error::Config(
                "chain needs n_states >= 1 and max_steps >= 1".into(),
            ));
        }
        if !(self.p_advance > 0.0 && self.p_advance <= 1.0) {
            return Err(Error::Config(format!(
                "p_advance {} not in (0, 1]",
                self.p_advance
            )));
        }
        if self.reward_table.len() != self.n_states {
            return Err(Error::Config(
                "reward_table must have one row per state".into(),
            ));
        }
        let in_range = |s: &usize| *s < self.n_states;
        if !self.terminal_states.iter().all(in_range)
            || !self.absorbing_states.iter().all(in_range)
            || self.start_state >= self.n_states
        {
            return Err(Error::Config("chain state index out of range".into()));
        }
        Ok(())
    }

    fn self_loops(&self, s: usize) -> bool {
        self.terminal_states.contains(&s) || self.absorbing_states.contains(&s)
    }

    fn moved(&self, s: usize, a: usize) -> usize {
        match a {
            LEFT => s.saturating_sub(1),
            _ => (s + 1).min(self.n_states - 1),
        }
    }

    fn state_index(&self, state: &EnvState) -> Result<usize> {
        self.check_state(state)?;
        let v = state.0[0];
        if v < 0.0 || v.round() >= self.n_states as f64 || v.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{v} is not a chain state index"
            )));
        }
        Ok(v as usize)
    }
}

impl TabularMdp for ChainWorld {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn transitions(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        if self.self_loops(s) {
            return vec![(s, 1.0)];
        }
        let target = self.moved(s, a);
        if target == s || self.p_advance == 1.0 {
            vec![(target, 1.0)]
        } else {
            vec![(target, self.p_advance), (s, 1.0 - self.p_advance)]
        }
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_table[s][a]
    }

    fn terminal(&self, s: usize) -> bool {
        self.terminal_states.contains(&s)
    }
}

impl Environment for ChainWorld {
    fn id(&self) -> String {
        "chain".into()
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn initial_state(&self, _rng: &mut dyn RngCore) -> EnvState {
        EnvState(vec![self.start_state as f64])
    }

    fn step(
        &self,
        state: &EnvState,
        action: &EnvAction,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome> {
        let s = self.state_index(state)?;
        if action.dim() != 1 {
            return Err(Error::Dimension {
                what: "action",
                expected: 1,
                got: action.dim(),
            });
        }
        let a = action.0[0];
        if a != LEFT as f64 && a != RIGHT as f64 {
            return Err(Error::InvalidArgument(format!("{a} is not a chain action")));
        }
        let a = a as usize;
        let reward = self.reward(s, a);
        // Always draw so the stream advances identically regardless of the state.
        let u: f64 = rng.gen();
        let next = if self.self_loops(s) || u >= self.p_advance {
            s
        } else {
            self.moved(s, a)
        };
        Ok(StepOutcome {
            next: EnvState(vec![next as f64]),
            reward,
            terminal: self.terminal(next),
        })
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        self.terminal_states.contains(&state.index())
    }

    fn max_reward(&self) -> f64 {
        self.reward_table
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn random_policy(&self) -> SharedPolicy {
        Arc::new(BiasedChainPolicy::new("chain-random", 0.5))
    }

    fn tabular(&self) -> Option<&dyn TabularMdp> {
        Some(self)
    }
}

/// Moves right with probability `bias`, left otherwise.
#[derive(Debug, Clone)]
pub struct BiasedChainPolicy {
    id: String,
    pub bias: f64,
}

impl BiasedChainPolicy {
    pub fn new(id: impl Into<String>, bias: f64) -> Self {
        Self {
            id: id.into(),
            bias,
        }
    }
}

impl Policy for BiasedChainPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&self, _state: &EnvState, _t: usize, rng: &mut dyn RngCore) -> EnvAction {
        let right = rng.gen::<f64>() < self.bias;
        EnvAction(vec![if right { RIGHT as f64 } else { LEFT as f64 }])
    }

    fn action_probs(&self, _state: &EnvState, _t: usize, n_actions: usize) -> Option<Vec<f64>> {
        (n_actions == 2).then(|| vec![1.0 - self.bias, self.bias])
    }
}
