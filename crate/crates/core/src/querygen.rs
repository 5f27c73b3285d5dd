//! Policy comparison queries: a scripted policy family, candidate construction, ground-truth
//! labeling, gap filtering and subsampling, plus the query file format.
//!
//! File layout: a `key=value` header line, then one line per query with the fields
//! `horizon policy_a policy_b value_a value_b label s... s_hat...`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Header;
use crate::envs::{BiasedChainPolicy, EnvSpec, GoalSeekingController};
use crate::mdp::{
    policy_value_dp, policy_value_mc, EnvState, Environment, SharedPolicy, ValueQuerySpec,
};
use crate::{par, rng, Error, Result};

const MAGIC: &str = "opcc-queries";
const VERSION: u32 = 1;

/// A labeled query `(s, pi_a, s_hat, pi_b, h)`; `label` is `value_a < value_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyComparisonQuery {
    pub s: EnvState,
    pub policy_a_id: String,
    pub s_hat: EnvState,
    pub policy_b_id: String,
    pub horizon: usize,
    pub value_a: f64,
    pub value_b: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<PolicyComparisonQuery>,
    pub horizons: Vec<usize>,
    pub gap_threshold: f64,
    pub gamma: f64,
    pub env_id: String,
    pub n_policies: usize,
    pub n_rollouts: usize,
    pub seed: u64,
}

/// The ordered scripted policies queries refer to, best first.
#[derive(Clone)]
pub struct PolicyFamily {
    pub policies: Vec<SharedPolicy>,
}

impl PolicyFamily {
    pub fn get(&self, id: &str) -> Result<&SharedPolicy> {
        self.policies
            .iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::UnknownPolicy(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    })
}

/// The family without the ordering check, used to resolve policy ids of stored queries.
///
/// Chain: right-biased policies with bias from 0.95 down to 0.55. PointMaze: goal-seeking
/// controllers with gain from 3.0 down to 0.6 and action noise from 0.1 up to 1.0.
pub fn policy_family(env: &EnvSpec, n_policies: usize) -> Result<PolicyFamily> {
    if n_policies < 2 {
        return Err(Error::InvalidArgument(
            "a policy family needs at least 2 policies".into(),
        ));
    }
    let policies: Vec<SharedPolicy> = match env {
        EnvSpec::Chain(_) => linspace(0.95, 0.55, n_policies)
            .map(|b| Arc::new(BiasedChainPolicy::new(format!("right-{b:.3}"), b)) as SharedPolicy)
            .collect(),
        EnvSpec::PointMaze(m) => linspace(3.0, 0.6, n_policies)
            .zip(linspace(0.1, 1.0, n_policies))
            .map(|(g, n)| {
                Arc::new(GoalSeekingController::new(
                    format!("seek-g{g:.2}-n{n:.2}"),
                    m,
                    g,
                    n,
                )) as SharedPolicy
            })
            .collect(),
    };
    Ok(PolicyFamily { policies })
}

/// Number of evaluation episodes behind the ordering check.
pub const ORDERING_ROLLOUTS: usize = 300;

/// The scripted family, checked to have strictly decreasing mean episodic return (discount
/// 0.99 over the environment's episode length) from the initial state distribution.
pub fn make_policy_family(env: &EnvSpec, n_policies: usize, seed: u64) -> Result<PolicyFamily> {
    let family = policy_family(env, n_policies)?;
    let returns = family_returns(env, &family, seed)?;
    for (i, w) in returns.windows(2).enumerate() {
        if !(w[0] > w[1]) {
            return Err(Error::PolicyOrdering(format!(
                "{} ({:.4}) does not beat {} ({:.4})",
                family.policies[i].id(),
                w[0],
                family.policies[i + 1].id(),
                w[1]
            )));
        }
    }
    Ok(family)
}

/// Mean episodic return of each family member.
pub fn family_returns(env: &EnvSpec, family: &PolicyFamily, seed: u64) -> Result<Vec<f64>> {
    let mut init = rng::stream(seed, 1);
    family
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut total = 0.0;
            for k in 0..ORDERING_ROLLOUTS {
                let s0 = env.initial_state(&mut init);
                let spec = ValueQuerySpec::new(s0, p.clone(), env.max_steps(), 0.99)?;
                let mut g = rng::seeded(rng::derive(rng::derive(seed, i as u64), k as u64));
                total += crate::mdp::rollout_return(env, &spec, &mut g)?;
            }
            Ok(total / ORDERING_ROLLOUTS as f64)
        })
        .collect()
}

/// An unlabeled query; policies are indices into the family.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub s: EnvState,
    pub policy_a: usize,
    pub s_hat: EnvState,
    pub policy_b: usize,
    pub horizon: usize,
}

/// Per horizon, `n_per_horizon / 2` same-state candidates followed by the rest with two
/// independently drawn states (distinct whenever more than one state is available). Each
/// candidate uses a uniformly drawn ordered pair of distinct policies.
pub fn generate_candidates(
    n_policies: usize,
    initial_states: &[EnvState],
    horizons: &[usize],
    n_per_horizon: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if n_policies < 2 {
        return Err(Error::InvalidArgument(
            "candidates need at least 2 policies".into(),
        ));
    }
    if initial_states.is_empty() {
        return Err(Error::InvalidArgument(
            "candidates need at least one initial state".into(),
        ));
    }
    let n_states = initial_states.len();
    let mut out = Vec::with_capacity(horizons.len() * n_per_horizon);
    for (hi, &horizon) in horizons.iter().enumerate() {
        let mut g = rng::stream(seed, hi as u64);
        for k in 0..n_per_horizon {
            let a = g.gen_range(0..n_policies);
            let b = (a + g.gen_range(1..n_policies)) % n_policies;
            let i = g.gen_range(0..n_states);
            let j = if k < n_per_horizon / 2 {
                i
            } else if n_states > 1 {
                (i + g.gen_range(1..n_states)) % n_states
            } else {
                i
            };
            out.push(Candidate {
                s: initial_states[i].clone(),
                policy_a: a,
                s_hat: initial_states[j].clone(),
                policy_b: b,
                horizon,
            });
        }
    }
    Ok(out)
}

/// How the minimum value gap of a kept query is chosen. One threshold applies to every horizon
/// of a query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "kebab-case")]
pub enum GapRule {
    Absolute(f64),
    /// A fraction of the largest achievable return over the longest horizon `h`,
    /// `max_reward (1 - gamma^h) / (1 - gamma)`.
    FractionOfMaxReturn(f64),
}

impl GapRule {
    pub fn threshold(&self, horizons: &[usize], gamma: f64, max_reward: f64) -> f64 {
        match *self {
            GapRule::Absolute(v) => v,
            GapRule::FractionOfMaxReturn(f) => {
                let h = horizons.iter().copied().max().unwrap_or(0);
                f * max_reward * (1.0 - gamma.powi(h as i32)) / (1.0 - gamma)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelConfig {
    pub gamma: f64,
    /// Monte-Carlo rollouts per side; unused when exact values are available.
    pub n_rollouts: usize,
    pub gap: GapRule,
    /// Queries kept per horizon.
    pub n_select: usize,
    pub seed: u64,
    pub jobs: usize,
}

/// Ground-truth value of one side: exact for tabular environments, else Monte-Carlo.
fn true_value(
    env: &EnvSpec,
    policy: &SharedPolicy,
    s: &EnvState,
    h: usize,
    cfg: &LabelConfig,
    seed: u64,
) -> Result<f64> {
    let spec = ValueQuerySpec::new(s.clone(), policy.clone(), h, cfg.gamma)?;
    if env.tabular().is_some() {
        policy_value_dp(env, &spec)
    } else {
        Ok(policy_value_mc(env, &spec, cfg.n_rollouts, seed)?.mean)
    }
}

/// Labels candidates, drops those whose values differ by less than the gap threshold, then keeps
/// a uniform subsample of `n_select` per horizon (in candidate order).
/// Candidate `i` is labeled with child seeds derived from `(seed, i)`.
pub fn label_filter_select(
    env: &EnvSpec,
    family: &PolicyFamily,
    candidates: &[Candidate],
    horizons: &[usize],
    cfg: &LabelConfig,
) -> Result<QuerySet> {
    let gap = cfg.gap.threshold(horizons, cfg.gamma, env.max_reward());
    if !(gap >= 0.0) {
        return Err(Error::InvalidArgument(
            "gap threshold must be nonnegative".into(),
        ));
    }
    if let Some(c) = candidates.iter().find(|c| !horizons.contains(&c.horizon)) {
        return Err(Error::InvalidArgument(format!(
            "candidate horizon {} not among {horizons:?}",
            c.horizon
        )));
    }
    let labeled = par::map_ordered(candidates, cfg.jobs, |i, c| {
        let child = rng::derive(cfg.seed, i as u64);
        let pa = family
            .policies
            .get(c.policy_a)
            .ok_or_else(|| Error::UnknownPolicy(c.policy_a.to_string()))?;
        let pb = family
            .policies
            .get(c.policy_b)
            .ok_or_else(|| Error::UnknownPolicy(c.policy_b.to_string()))?;
        let va = true_value(env, pa, &c.s, c.horizon, cfg, rng::derive(child, 0))?;
        let vb = true_value(env, pb, &c.s_hat, c.horizon, cfg, rng::derive(child, 1))?;
        Ok::<_, Error>(PolicyComparisonQuery {
            s: c.s.clone(),
            policy_a_id: pa.id().to_string(),
            s_hat: c.s_hat.clone(),
            policy_b_id: pb.id().to_string(),
            horizon: c.horizon,
            value_a: va,
            value_b: vb,
            label: va < vb,
        })
    })?;

    let mut by_horizon: BTreeMap<usize, Vec<PolicyComparisonQuery>> = BTreeMap::new();
    for q in labeled {
        if (q.value_a - q.value_b).abs() >= gap {
            by_horizon.entry(q.horizon).or_default().push(q);
        }
    }
    let mut queries = Vec::new();
    for (hi, &h) in horizons.iter().enumerate() {
        let Some(kept) = by_horizon.remove(&h) else {
            continue;
        };
        let mut g = rng::stream(rng::derive(cfg.seed, u64::MAX), hi as u64);
        let mut chosen = sample(&mut g, kept.len(), cfg.n_select.min(kept.len())).into_vec();
        chosen.sort_unstable();
        queries.extend(chosen.into_iter().map(|i| kept[i].clone()));
    }
    if queries.is_empty() {
        return Err(Error::EmptyResult(
            "every candidate query fell below the gap threshold".into(),
        ));
    }
    Ok(QuerySet {
        queries,
        horizons: horizons.to_vec(),
        gap_threshold: gap,
        gamma: cfg.gamma,
        env_id: env.id(),
        n_policies: family.len(),
        n_rollouts: cfg.n_rollouts,
        seed: cfg.seed,
    })
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl QuerySet {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_threshold >= 0.0) {
            return Err(Error::InvalidArgument(
                "gap threshold must be nonnegative".into(),
            ));
        }
        for (i, q) in self.queries.iter().enumerate() {
            if !self.horizons.contains(&q.horizon) {
                return Err(Error::InvalidArgument(format!(
                    "query {i} has horizon {} outside the set",
                    q.horizon
                )));
            }
            if (q.value_a - q.value_b).abs() < self.gap_threshold {
                return Err(Error::InvalidArgument(format!(
                    "query {i} violates the gap threshold"
                )));
            }
            if q.label != (q.value_a < q.value_b) {
                return Err(Error::InvalidArgument(format!(
                    "query {i} label disagrees with its values"
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let obs_dim = self.queries.first().map_or(0, |q| q.s.dim());
        let mut out = format!(
            "{MAGIC} version={VERSION} env={} gamma={:?} horizons={} gap_threshold={:?} n_policies={} n_rollouts={} seed={} obs_dim={obs_dim} n={}\n",
            self.env_id,
            self.gamma,
            join(&self.horizons),
            self.gap_threshold,
            self.n_policies,
            self.n_rollouts,
            self.seed,
            self.queries.len(),
        );
        for q in &self.queries {
            write!(
                out,
                "{} {} {} {:?} {:?} {}",
                q.horizon, q.policy_a_id, q.policy_b_id, q.value_a, q.value_b, q.label as u8
            )
            .unwrap();
            for v in q.s.0.iter().chain(&q.s_hat.0) {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty query file"))?;
        let h = Header::parse(header, MAGIC, origin)?;
        let version: u32 = h.get("version")?;
        if version != VERSION {
            return Err(Error::parse(
                origin,
                1,
                format!("unsupported query file version {version}"),
            ));
        }
        let list = |key: &str| -> Result<Vec<&str>> {
            let raw = h.raw(key)?;
            Ok(if raw.is_empty() {
                vec![]
            } else {
                raw.split(',').collect()
            })
        };
        let num = |v: &str, line: usize| -> Result<f64> {
            v.parse()
                .map_err(|e| Error::parse(origin, line, format!("`{v}`: {e}")))
        };
        let horizons = list("horizons")?
            .into_iter()
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::parse(origin, 1, format!("horizons: {e}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let obs_dim: usize = h.get("obs_dim")?;
        let n: usize = h.get("n")?;
        let mut queries = Vec::with_capacity(n);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let ln = i + 1;
            let f: Vec<&str> = line.split_ascii_whitespace().collect();
            if f.len() != 6 + 2 * obs_dim {
                return Err(Error::parse(
                    origin,
                    ln,
                    format!("expected {} fields, got {}", 6 + 2 * obs_dim, f.len()),
                ));
            }
            let label = match f[5] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(origin, ln, format!("bad label `{other}`"))),
            };
            let states = f[6..]
                .iter()
                .map(|v| num(v, ln))
                .collect::<Result<Vec<f64>>>()?;
            queries.push(PolicyComparisonQuery {
                horizon: f[0]
                    .parse()
                    .map_err(|e| Error::parse(origin, ln, format!("horizon: {e}")))?,
                policy_a_id: f[1].to_string(),
                policy_b_id: f[2].to_string(),
                value_a: num(f[3], ln)?,
                value_b: num(f[4], ln)?,
                label,
                s: EnvState(states[..obs_dim].to_vec()),
                s_hat: EnvState(states[obs_dim..].to_vec()),
            });
        }
        if queries.len() != n {
            return Err(Error::parse(
                origin,
                1,
                format!("header declares {n} queries, found {}", queries.len()),
            ));
        }
        let set = QuerySet {
            queries,
            horizons,
            gap_threshold: h.get("gap_threshold")?,
            gamma: h.get("gamma")?,
            env_id: h.raw("env")?.to_string(),
            n_policies: h.get("n_policies")?,
            n_rollouts: h.get("n_rollouts")?,
            seed: h.get("seed")?,
        };
        set.validate()
            .map_err(|e| Error::parse(origin, 1, e.to_string()))?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_text(&fs::read_to_string(path)?, &path.display().to_string())
    }
}
