//! Learned dynamics and reward models: base networks, bootstrap ensembles with constant priors,
//! and model rollouts.

mod ensemble;
pub mod loss;
mod member;
mod tabular;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use ensemble::{train_ensemble, Ensemble};
pub use member::{train_member, train_member_with_report, EnsembleMember, Head, TrainReport};
pub use tabular::TabularModel;

use crate::envs::EnvSpec;
use crate::mdp::{EnvAction, EnvState, Policy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    DeterministicFf,
    GaussianFf,
    Autoregressive,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::DeterministicFf,
        ModelKind::GaussianFf,
        ModelKind::Autoregressive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DeterministicFf => "deterministic-ff",
            ModelKind::GaussianFf => "gaussian-ff",
            ModelKind::Autoregressive => "autoregressive",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{name}`")))
    }

    pub fn is_gaussian(self) -> bool {
        self != ModelKind::DeterministicFf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseModelConfig {
    pub kind: ModelKind,
    pub hidden_sizes: Vec<usize>,
    /// Standardize inputs and targets with the dataset moments.
    pub normalize: bool,
    /// Weight of the frozen prior network; 0 disables it.
    pub prior_scale: f64,
    pub logvar_clamp: (f64, f64),
    /// Upper bound on training epochs; early stopping usually ends sooner.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
}

impl Default for BaseModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::DeterministicFf,
            hidden_sizes: vec![64, 64],
            normalize: true,
            prior_scale: 0.0,
            logvar_clamp: (-10.0, 0.5),
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
            patience: 5,
        }
    }
}

impl BaseModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be a nonempty list of positive widths");
        }
        if !(self.logvar_clamp.0 < self.logvar_clamp.1) {
            return bad("logvar_clamp needs lo < hi");
        }
        if !(self.prior_scale >= 0.0 && self.prior_scale.is_finite()) {
            return bad("prior_scale must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// How a stochastic model produces its next prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    Sample,
    Mean,
}

/// A one-step model of the environment.
pub trait DynamicsModel: Send + Sync {
    fn predict(
        &self,
        s: &EnvState,
        a: &EnvAction,
        mode: RolloutMode,
        rng: &mut dyn RngCore,
    ) -> (EnvState, f64);
}

/// The predefined episode-termination rule used in model rollouts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Never,
    /// Tabular environments: terminal state indices.
    States(Vec<usize>),
}

impl Termination {
    pub fn for_env(env: &EnvSpec) -> Self {
        match env {
            EnvSpec::Chain(c) if !c.terminal_states.is_empty() => {
                Termination::States(c.terminal_states.clone())
            }
            _ => Termination::Never,
        }
    }

    pub fn fires(&self, s: &EnvState) -> bool {
        match self {
            Termination::Never => false,
            Termination::States(states) => states.contains(&s.index()),
        }
    }

    pub(crate) fn to_text(&self) -> String {
        match self {
            Termination::Never => "never".into(),
            Termination::States(states) => {
                let list: Vec<String> = states.iter().map(usize::to_string).collect();
                format!("states:{}", list.join(","))
            }
        }
    }

    pub(crate) fn from_text(text: &str) -> Option<Self> {
        if text == "never" {
            return Some(Termination::Never);
        }
        let list = text.strip_prefix("states:")?;
        list.split(',')
            .map(|v| v.parse().ok())
            .collect::<Option<Vec<_>>>()
            .map(Termination::States)
    }
}

/// Discounted return of one simulated `h`-step trajectory through `model`. Accumulation stops
/// once `termination` fires on the current state.
#[allow(clippy::too_many_arguments)]
pub fn rollout_value(
    model: &dyn DynamicsModel,
    policy: &dyn Policy,
    s0: &EnvState,
    h: usize,
    gamma: f64,
    mode: RolloutMode,
    termination: &Termination,
    rng: &mut dyn RngCore,
) -> f64 {
    let mut s = s0.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..h {
        if termination.fires(&s) {
            break;
        }
        let a = policy.act(&s, t, rng);
        let (next, r) = model.predict(&s, &a, mode, rng);
        total += discount * r;
        discount *= gamma;
        s = next;
    }
    total
}
