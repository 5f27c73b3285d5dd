//! States, actions, non-stationary policies and finite-horizon policy values.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::rng;
use crate::{Error, Result};

/// An observation vector. Tabular environments embed the state index as a one-element vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState(pub Vec<f64>);

/// An action vector. Tabular environments embed the action index as a one-element vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvAction(pub Vec<f64>);

impl EnvState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Nearest state index for tabular environments.
    pub fn index(&self) -> usize {
        self.0.first().map_or(0, |v| v.round().max(0.0) as usize)
    }
}

impl EnvAction {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn index(&self) -> usize {
        self.0.first().map_or(0, |v| v.round().max(0.0) as usize)
    }
}

/// A possibly stochastic, possibly time-dependent policy `pi(s, t)`.
pub trait Policy: Send + Sync {
    fn id(&self) -> &str;

    fn act(&self, state: &EnvState, t: usize, rng: &mut dyn RngCore) -> EnvAction;

    /// Exact action distribution over a finite action set, for tabular environments.
    fn action_probs(&self, _state: &EnvState, _t: usize, _n_actions: usize) -> Option<Vec<f64>> {
        None
    }
}

impl fmt::Debug for dyn Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Policy({})", self.id())
    }
}

pub type SharedPolicy = Arc<dyn Policy>;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub terminal: bool,
}

/// A true environment: the simulator used for ground truth and data collection.
pub trait Environment: Send + Sync {
    fn id(&self) -> String;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Episode length used when collecting data.
    fn max_steps(&self) -> usize;
    fn initial_state(&self, rng: &mut dyn RngCore) -> EnvState;
    fn step(
        &self,
        state: &EnvState,
        action: &EnvAction,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome>;
    /// The predefined termination function, shared with model rollouts.
    fn is_terminal(&self, state: &EnvState) -> bool;
    /// Largest single-step reward, used to scale gap thresholds.
    fn max_reward(&self) -> f64;
    /// Uniform random behaviour over the action space.
    fn random_policy(&self) -> SharedPolicy;

    fn tabular(&self) -> Option<&dyn TabularMdp> {
        None
    }

    fn check_state(&self, state: &EnvState) -> Result<()> {
        if state.dim() != self.obs_dim() {
            return Err(Error::Dimension {
                what: "state",
                expected: self.obs_dim(),
                got: state.dim(),
            });
        }
        if state.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "state has non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

/// Exact transition and reward tables of a finite MDP.
pub trait TabularMdp {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// `(next_state, probability)` pairs.
    fn transitions(&self, state: usize, action: usize) -> Vec<(usize, f64)>;
    fn reward(&self, state: usize, action: usize) -> f64;
    fn terminal(&self, state: usize) -> bool;
}

/// Arguments of `V^pi(s, h)`.
#[derive(Clone)]
pub struct ValueQuerySpec {
    pub state: EnvState,
    pub policy: SharedPolicy,
    pub horizon: usize,
    pub gamma: f64,
}

impl ValueQuerySpec {
    pub fn new(state: EnvState, policy: SharedPolicy, horizon: usize, gamma: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma {gamma} not in [0, 1)"
            )));
        }
        Ok(Self {
            state,
            policy,
            horizon,
            gamma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl McEstimate {
    /// Sample mean and standard error (sample std with divisor n - 1, over sqrt n).
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { mean, std_err: 0.0 };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

/// One discounted return of `spec.policy` from `spec.state` in the true environment.
/// Rewards after reaching a terminal state are zero.
pub fn rollout_return(
    env: &dyn Environment,
    spec: &ValueQuerySpec,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut state = spec.state.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..spec.horizon {
        if env.is_terminal(&state) {
            break;
        }
        let action = spec.policy.act(&state, t, rng);
        let out = env.step(&state, &action, rng)?;
        total += discount * out.reward;
        discount *= spec.gamma;
        if out.terminal {
            break;
        }
        state = out.next;
    }
    Ok(total)
}

/// Monte-Carlo estimate of `V^pi(s, h)`. Rollout `i` runs on its own generator seeded with
/// `seed + i`.
pub fn policy_value_mc(
    env: &dyn Environment,
    spec: &ValueQuerySpec,
    n_rollouts: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument(
            "n_rollouts must be at least 1".into(),
        ));
    }
    env.check_state(&spec.state)?;
    let mut returns = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut rng = rng::seeded(seed.wrapping_add(i as u64));
        returns.push(rollout_return(env, spec, &mut rng)?);
    }
    Ok(McEstimate::from_samples(&returns))
}

/// Exact `V^pi(s, h)` by backward induction over `t = h-1, ..., 0`.
pub fn policy_value_dp(env: &dyn Environment, spec: &ValueQuerySpec) -> Result<f64> {
    let mdp = env.tabular().ok_or_else(|| {
        Error::Unsupported(format!("{} has no exact transition tables", env.id()))
    })?;
    env.check_state(&spec.state)?;
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let start = spec.state.index();
    if start >= n_states {
        return Err(Error::InvalidArgument(format!(
            "state index {start} out of range"
        )));
    }

    let mut next_values = vec![0.0; n_states];
    let mut values = vec![0.0; n_states];
    for t in (0..spec.horizon).rev() {
        for (s, value) in values.iter_mut().enumerate() {
            if mdp.terminal(s) {
                *value = 0.0;
                continue;
            }
            let probs = spec
                .policy
                .action_probs(&EnvState(vec![s as f64]), t, n_actions)
                .ok_or_else(|| {
                    Error::Unsupported(format!(
                        "policy {} does not expose an action distribution",
                        spec.policy.id()
                    ))
                })?;
            let mut v = 0.0;
            for (a, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let future: f64 = mdp
                    .transitions(s, a)
                    .into_iter()
                    .map(|(s2, q)| q * next_values[s2])
                    .sum();
                v += p * (mdp.reward(s, a) + spec.gamma * future);
            }
            *value = v;
        }
        std::mem::swap(&mut values, &mut next_values);
    }
    Ok(next_values[start])
}

/// Takes a fixed action at `t = 0` and then follows `inner`.
///
/// The inner policy receives the absolute time index `t`, so the composed value is
/// `Q^pi(s, a0, h)` for policies indexed by absolute time.
pub struct FirstActionPolicy {
    id: String,
    first: EnvAction,
    inner: SharedPolicy,
}

impl Policy for FirstActionPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn act(&self, state: &EnvState, t: usize, rng: &mut dyn RngCore) -> EnvAction {
        if t == 0 {
            self.first.clone()
        } else {
            self.inner.act(state, t, rng)
        }
    }

    fn action_probs(&self, state: &EnvState, t: usize, n_actions: usize) -> Option<Vec<f64>> {
        if t == 0 {
            let mut probs = vec![0.0; n_actions];
            *probs.get_mut(self.first.index())? = 1.0;
            Some(probs)
        } else {
            self.inner.action_probs(state, t, n_actions)
        }
    }
}

pub fn compose_first_action(policy: SharedPolicy, first: EnvAction) -> SharedPolicy {
    let id = format!("{}@first{:?}", policy.id(), first.0);
    Arc::new(FirstActionPolicy {
        id,
        first,
        inner: policy,
    })
}
