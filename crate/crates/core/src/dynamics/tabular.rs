use rand::{Rng as _, RngCore};

use super::{DynamicsModel, RolloutMode};
use crate::data::Dataset;
use crate::mdp::{EnvAction, EnvState};
use crate::{Error, Result};

/// Maximum-likelihood tabular model: empirical next-state frequencies and mean rewards per
/// `(state, action)`. Unvisited pairs stay in place with zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    n_states: usize,
    n_actions: usize,
    /// `counts[(s * n_actions + a) * n_states + s2]`
    counts: Vec<u32>,
    reward_sum: Vec<f64>,
}

impl TabularModel {
    pub fn fit(dataset: &Dataset, n_states: usize, n_actions: usize) -> Result<Self> {
        if dataset.obs_dim != 1 || dataset.act_dim != 1 {
            return Err(Error::Unsupported(
                "tabular models need scalar state and action indices".into(),
            ));
        }
        let mut m = Self {
            n_states,
            n_actions,
            counts: vec![0; n_states * n_actions * n_states],
            reward_sum: vec![0.0; n_states * n_actions],
        };
        for t in &dataset.transitions {
            let (s, a, s2) = (t.s.index(), t.a.index(), t.s_next.index());
            if s >= n_states || a >= n_actions || s2 >= n_states {
                return Err(Error::InvalidArgument(format!(
                    "transition ({s}, {a}, {s2}) out of range"
                )));
            }
            m.counts[(s * n_actions + a) * n_states + s2] += 1;
            m.reward_sum[s * n_actions + a] += t.r;
        }
        Ok(m)
    }

    fn row(&self, s: usize, a: usize) -> &[u32] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.counts[base..base + self.n_states]
    }
}

impl DynamicsModel for TabularModel {
    /// `Sample` draws from the empirical distribution; `Mean` takes its most frequent outcome.
    fn predict(
        &self,
        s: &EnvState,
        a: &EnvAction,
        mode: RolloutMode,
        rng: &mut dyn RngCore,
    ) -> (EnvState, f64) {
        let (si, ai) = (s.index(), a.index());
        let row = self.row(si, ai);
        let total: u32 = row.iter().sum();
        if total == 0 {
            return (s.clone(), 0.0);
        }
        let next = match mode {
            RolloutMode::Mean => (0..self.n_states)
                .max_by_key(|&k| (row[k], std::cmp::Reverse(k)))
                .unwrap(),
            RolloutMode::Sample => {
                let mut u = rng.gen_range(0..total);
                let mut k = 0;
                while u >= row[k] {
                    u -= row[k];
                    k += 1;
                }
                k
            }
        };
        let r = self.reward_sum[si * self.n_actions + ai] / total as f64;
        (EnvState(vec![next as f64]), r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;
    use crate::rng;

    fn tr(s: usize, a: usize, s2: usize, r: f64) -> Transition {
        Transition {
            s: EnvState(vec![s as f64]),
            a: EnvAction(vec![a as f64]),
            s_next: EnvState(vec![s2 as f64]),
            r,
            terminal: false,
        }
    }

    #[test]
    fn empirical_frequencies_and_rewards() {
        let d = Dataset::new(
            vec![
                tr(0, 1, 1, 1.0),
                tr(0, 1, 1, 0.0),
                tr(0, 1, 0, 0.5),
                tr(1, 0, 0, 2.0),
            ],
            1,
            1,
            "t",
            "chain",
            0,
        )
        .unwrap();
        let m = TabularModel::fit(&d, 2, 2).unwrap();
        let (s, a) = (EnvState(vec![0.0]), EnvAction(vec![1.0]));
        assert_eq!(
            m.predict(&s, &a, RolloutMode::Mean, &mut rng::seeded(0)),
            (EnvState(vec![1.0]), 0.5)
        );
        let mut g = rng::seeded(3);
        let ones = (0..3000)
            .filter(|_| m.predict(&s, &a, RolloutMode::Sample, &mut g).0 .0[0] == 1.0)
            .count();
        assert!((ones as f64 / 3000.0 - 2.0 / 3.0).abs() < 0.03);
        let unseen = m.predict(
            &EnvState(vec![1.0]),
            &EnvAction(vec![1.0]),
            RolloutMode::Sample,
            &mut g,
        );
        assert_eq!(unseen, (EnvState(vec![1.0]), 0.0));
    }
}
