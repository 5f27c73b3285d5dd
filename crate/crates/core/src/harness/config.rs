//! Experiment configuration, stored as TOML with a `version` field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::{Method, UpciDf};
use crate::data::DATASET_NAMES;
use crate::dynamics::{BaseModelConfig, ModelKind, RolloutMode};
use crate::envs::EnvSpec;
use crate::querygen::GapRule;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// `chain`, `maze-open`, `maze-umaze` or `maze-medium`.
    pub env: String,
    /// Replaces the named environment's built-in description when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_spec: Option<EnvSpec>,
    /// Model-training seeds; datasets and queries keep their own fixed seeds.
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub queries: QuerySpec,
    pub model: ModelSpec,
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub sweep: SweepAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Behavior mix: random, medium, expert, mixed or replay.
    pub kind: String,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub horizons: Vec<usize>,
    pub n_policies: usize,
    pub n_initial_states: usize,
    /// Candidates generated per horizon.
    pub n_candidates: usize,
    /// Queries kept per horizon.
    pub n_select: usize,
    pub gap: GapRule,
    pub gamma: f64,
    /// Monte-Carlo rollouts per side for ground truth.
    pub n_rollouts: usize,
    pub seed: u64,
}

/// `ensemble_size` plus the base-model keys, side by side in one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct ModelSpec {
    pub ensemble_size: usize,
    #[serde(flatten)]
    pub base: BaseModelConfig,
}

impl TryFrom<toml::Table> for ModelSpec {
    type Error = String;

    fn try_from(mut table: toml::Table) -> std::result::Result<Self, String> {
        let size = table
            .remove("ensemble_size")
            .ok_or("model.ensemble_size is required")?;
        let ensemble_size = size
            .as_integer()
            .and_then(|v| usize::try_from(v).ok())
            .ok_or("model.ensemble_size must be a nonnegative integer")?;
        let base =
            BaseModelConfig::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
        Ok(Self {
            ensemble_size,
            base,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub methods: Vec<Method>,
    pub n_rollouts_per_member: usize,
    pub cr_k: usize,
    /// Sampling mode of stochastic models during rollouts.
    #[serde(default = "default_mode")]
    pub rollout_mode: RolloutMode,
    #[serde(default)]
    pub upci_df: UpciDf,
}

fn default_mode() -> RolloutMode {
    RolloutMode::Sample
}

/// Values tried for each ablation axis. Each axis is varied alone, all other settings staying at
/// their defaults. Empty lists skip the axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub dataset: Vec<String>,
    pub ensemble_count: Vec<usize>,
    pub prior_scale: Vec<f64>,
    pub kind: Vec<ModelKind>,
    /// `true` trains deterministic feed-forward models, `false` Gaussian feed-forward ones.
    pub deterministic: Vec<bool>,
    pub normalize: Vec<bool>,
    /// Horizons reported separately; every query horizon when empty.
    pub horizon: Vec<usize>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for a named environment.
    pub fn default_for(env: &str) -> Result<Self> {
        let chain = env == "chain";
        EnvSpec::by_name(env)?;
        Ok(Self {
            version: CONFIG_VERSION,
            env: env.to_string(),
            env_spec: None,
            seeds: vec![0, 1, 2, 3, 4],
            dataset: DatasetSpec {
                kind: if chain { "random" } else { "expert" }.into(),
                size: 1000,
                seed: 0,
            },
            queries: QuerySpec {
                horizons: if chain {
                    vec![5, 10, 15, 20]
                } else {
                    vec![10, 20, 30, 40, 50]
                },
                n_policies: 4,
                n_initial_states: 500,
                n_candidates: 200,
                n_select: 150,
                gap: GapRule::FractionOfMaxReturn(0.1),
                gamma: 0.99,
                n_rollouts: 2000,
                seed: 0,
            },
            model: ModelSpec {
                ensemble_size: 10,
                base: BaseModelConfig {
                    hidden_sizes: if chain { vec![32, 32] } else { vec![64, 64] },
                    ..BaseModelConfig::default()
                },
            },
            evaluation: EvaluationSpec {
                methods: Method::ALL.to_vec(),
                n_rollouts_per_member: 10,
                cr_k: 10,
                rollout_mode: RolloutMode::Sample,
                upci_df: UpciDf::MMinusOne,
            },
            sweep: SweepAxes::default(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let env = match &self.env_spec {
            Some(spec) => spec.clone(),
            None => EnvSpec::by_name(&self.env)?,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        self.env_spec()?;
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        for name in std::iter::once(&self.dataset.kind).chain(&self.sweep.dataset) {
            if !DATASET_NAMES.contains(&name.as_str()) {
                return bad(format!("unknown dataset type `{name}`"));
            }
        }
        if self.dataset.size == 0 {
            return bad("dataset.size must be positive".into());
        }
        let q = &self.queries;
        if q.horizons.is_empty() || q.horizons.contains(&0) {
            return bad("queries.horizons must be a nonempty list of positive horizons".into());
        }
        if q.n_policies < 2 {
            return bad("queries.n_policies must be at least 2".into());
        }
        if q.n_initial_states == 0 || q.n_candidates == 0 || q.n_select == 0 || q.n_rollouts == 0 {
            return bad("query counts must be positive".into());
        }
        if !(0.0..1.0).contains(&q.gamma) {
            return bad("queries.gamma must lie in [0, 1)".into());
        }
        if let Some(h) = self.sweep.horizon.iter().find(|h| !q.horizons.contains(h)) {
            return bad(format!("sweep horizon {h} is not among queries.horizons"));
        }
        if self.model.ensemble_size == 0 || self.sweep.ensemble_count.contains(&0) {
            return bad("ensemble sizes must be positive".into());
        }
        self.model.base.validate()?;
        let e = &self.evaluation;
        if e.methods.is_empty() {
            return bad("evaluation.methods must be nonempty".into());
        }
        if e.n_rollouts_per_member == 0 || e.cr_k == 0 {
            return bad(
                "evaluation.n_rollouts_per_member and evaluation.cr_k must be positive".into(),
            );
        }
        if self.sweep.prior_scale.iter().any(|p| !(*p >= 0.0)) {
            return bad("prior scales must be nonnegative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for env in ["chain", "maze-open"] {
            let mut c = ExperimentConfig::default_for(env).unwrap();
            c.sweep.prior_scale = vec![0.0, 1.0];
            c.sweep.kind = vec![ModelKind::Autoregressive];
            let text = c.to_toml();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let text = ExperimentConfig::default_for("chain").unwrap().to_toml();
        assert!(ExperimentConfig::from_toml(&text.replace("version = 1", "version = 2")).is_err());
        let typo = text.replace("hidden_sizes", "hiden_sizes");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let seeds = text.replace("seeds = [0, 1, 2, 3, 4]", "seeds = []");
        assert!(ExperimentConfig::from_toml(&seeds).is_err());
    }

    #[test]
    fn env_spec_overrides_the_name() {
        let mut c = ExperimentConfig::default_for("maze-open").unwrap();
        let mut maze = crate::envs::PointMaze::open();
        maze.noise_std = 0.0;
        c.env_spec = Some(EnvSpec::PointMaze(maze.clone()));
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back.env_spec().unwrap(), EnvSpec::PointMaze(maze));
    }
}
