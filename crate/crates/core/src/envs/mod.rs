//! Desk-scale true environments.

mod chain;
mod maze;

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use chain::{BiasedChainPolicy, ChainWorld, LEFT, RIGHT};
pub use maze::{GoalSeekingController, NavGrid, PointMaze, Rect, UniformMazePolicy};

use crate::mdp::{EnvAction, EnvState, Environment, Policy, SharedPolicy, StepOutcome, TabularMdp};
use crate::{rng, Error, Result};

/// A serializable environment description; the concrete environment the pipeline runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Chain(ChainWorld),
    PointMaze(PointMaze),
}

impl EnvSpec {
    /// `chain`, `maze-open`, `maze-umaze` or `maze-medium`.
    pub fn by_name(name: &str) -> Result<Self> {
        if name == "chain" {
            return Ok(EnvSpec::Chain(ChainWorld::goal_chain(10, 0.8, 50)));
        }
        name.strip_prefix("maze-")
            .and_then(PointMaze::by_layout)
            .map(EnvSpec::PointMaze)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown environment `{name}` (expected chain, maze-open, maze-umaze, maze-medium)"
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Chain(c) => c.validate(),
            EnvSpec::PointMaze(m) => m.validate(),
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            EnvSpec::Chain(c) => c,
            EnvSpec::PointMaze(m) => m,
        }
    }

    /// A uniform mixture that re-draws which policy acts at every step.
    pub fn mixture(&self, id: &str, policies: Vec<SharedPolicy>) -> SharedPolicy {
        Arc::new(MixturePolicy {
            id: id.into(),
            policies,
        })
    }
}

impl Environment for EnvSpec {
    fn id(&self) -> String {
        self.inner().id()
    }
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }
    fn act_dim(&self) -> usize {
        self.inner().act_dim()
    }
    fn max_steps(&self) -> usize {
        self.inner().max_steps()
    }
    fn initial_state(&self, rng: &mut dyn RngCore) -> EnvState {
        self.inner().initial_state(rng)
    }
    fn step(
        &self,
        state: &EnvState,
        action: &EnvAction,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome> {
        self.inner().step(state, action, rng)
    }
    fn is_terminal(&self, state: &EnvState) -> bool {
        self.inner().is_terminal(state)
    }
    fn max_reward(&self) -> f64 {
        self.inner().max_reward()
    }
    fn random_policy(&self) -> SharedPolicy {
        self.inner().random_policy()
    }
    fn tabular(&self) -> Option<&dyn TabularMdp> {
        self.inner().tabular()
    }
}

/// Picks one of `policies` uniformly at random at every step.
pub struct MixturePolicy {
    id: String,
    policies: Vec<SharedPolicy>,
}

impl Policy for MixturePolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&self, state: &EnvState, t: usize, rng: &mut dyn RngCore) -> EnvAction {
        use rand::Rng as _;
        let k = rng.gen_range(0..self.policies.len());
        self.policies[k].act(state, t, rng)
    }

    fn action_probs(&self, state: &EnvState, t: usize, n_actions: usize) -> Option<Vec<f64>> {
        let w = 1.0 / self.policies.len() as f64;
        let mut out = vec![0.0; n_actions];
        for p in &self.policies {
            for (o, q) in out.iter_mut().zip(p.action_probs(state, t, n_actions)?) {
                *o += w * q;
            }
        }
        Some(out)
    }
}

/// Logs visited states from episodes driven round-robin by each generator and then by a
/// per-step uniform mixture of all generators, until `n` states are collected.
pub fn sample_initial_states(
    env: &EnvSpec,
    generators: &[SharedPolicy],
    n: usize,
    seed: u64,
) -> Result<Vec<EnvState>> {
    if n == 0 || generators.is_empty() {
        return Err(Error::InvalidArgument(
            "sample_initial_states needs n >= 1 and at least one generator".into(),
        ));
    }
    let mut drivers: Vec<SharedPolicy> = generators.to_vec();
    if generators.len() > 1 {
        drivers.push(env.mixture("mixture", generators.to_vec()));
    }
    let mut rng = rng::seeded(seed);
    let mut states = Vec::with_capacity(n);
    let mut episode = 0;
    while states.len() < n {
        let policy = &drivers[episode % drivers.len()];
        let mut s = env.initial_state(&mut rng);
        for t in 0..env.max_steps() {
            states.push(s.clone());
            if states.len() == n || env.is_terminal(&s) {
                break;
            }
            let a = policy.act(&s, t, &mut rng);
            let out = env.step(&s, &a, &mut rng)?;
            s = out.next;
        }
        episode += 1;
    }
    Ok(states)
}
