//! Offline transition datasets: collection, statistics, bootstrap resampling and the text file
//! format.
//!
//! File layout: one header line of `key=value` pairs, then one line per transition with the
//! fields `s a s_next r terminal` flattened and separated by single spaces. Reals use the
//! shortest representation that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;

use crate::envs::{BiasedChainPolicy, EnvSpec, GoalSeekingController};
use crate::mdp::{EnvAction, EnvState, Environment, SharedPolicy};
use crate::{rng, Error, Result};

pub const STD_FLOOR: f64 = 1e-6;
const DATASET_MAGIC: &str = "opcc-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: EnvState,
    pub a: EnvAction,
    pub s_next: EnvState,
    pub r: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub name: String,
    pub env_id: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        transitions: Vec<Transition>,
        obs_dim: usize,
        act_dim: usize,
        name: impl Into<String>,
        env_id: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::InvalidArgument("dataset must be nonempty".into()));
        }
        for t in &transitions {
            for (what, got, expected) in [
                ("s", t.s.dim(), obs_dim),
                ("a", t.a.dim(), act_dim),
                ("s_next", t.s_next.dim(), obs_dim),
            ] {
                if got != expected {
                    return Err(Error::Dimension {
                        what,
                        expected,
                        got,
                    });
                }
            }
        }
        Ok(Self {
            transitions,
            obs_dim,
            act_dim,
            name: name.into(),
            env_id: env_id.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DATASET_MAGIC} version={DATASET_VERSION} obs_dim={} act_dim={} name={} env={} seed={} n={}\n",
            self.obs_dim,
            self.act_dim,
            self.name,
            self.env_id,
            self.seed,
            self.len()
        );
        for t in &self.transitions {
            let fields =
                t.s.0
                    .iter()
                    .chain(&t.a.0)
                    .chain(&t.s_next.0)
                    .chain(std::iter::once(&t.r));
            for v in fields {
                write!(out, "{v} ").unwrap();
            }
            out.push_str(if t.terminal { "1\n" } else { "0\n" });
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty dataset file"))?;
        let header = Header::parse(header, DATASET_MAGIC, origin)?;
        let obs_dim: usize = header.get("obs_dim")?;
        let act_dim: usize = header.get("act_dim")?;
        let n: usize = header.get("n")?;
        let width = 2 * obs_dim + act_dim + 2;
        let mut transitions = Vec::with_capacity(n);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            if fields.len() != width {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {width} fields, got {}", fields.len()),
                ));
            }
            let nums = fields[..width - 1]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            let terminal = match fields[width - 1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(
                        origin,
                        i + 1,
                        format!("bad terminal flag `{other}`"),
                    ))
                }
            };
            transitions.push(Transition {
                s: EnvState(nums[..obs_dim].to_vec()),
                a: EnvAction(nums[obs_dim..obs_dim + act_dim].to_vec()),
                s_next: EnvState(nums[obs_dim + act_dim..2 * obs_dim + act_dim].to_vec()),
                r: nums[width - 2],
                terminal,
            });
        }
        if transitions.len() != n {
            return Err(Error::parse(
                origin,
                1,
                format!(
                    "header declares {n} transitions, found {}",
                    transitions.len()
                ),
            ));
        }
        Dataset::new(
            transitions,
            obs_dim,
            act_dim,
            header.raw("name")?,
            header.raw("env")?,
            header.get("seed")?,
        )
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

/// `key=value` header line shared by the text file formats.
pub(crate) struct Header<'a> {
    origin: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    pub(crate) fn parse(line: &'a str, magic: &str, origin: &'a str) -> Result<Self> {
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some(magic) {
            return Err(Error::parse(origin, 1, format!("missing `{magic}` header")));
        }
        let pairs = parts
            .map(|p| {
                p.split_once('=')
                    .ok_or_else(|| Error::parse(origin, 1, format!("bad header field `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { origin, pairs })
    }

    pub(crate) fn raw(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::parse(self.origin, 1, format!("header lacks `{key}`")))
    }

    pub(crate) fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)?
            .parse()
            .map_err(|e: T::Err| Error::parse(self.origin, 1, format!("header field `{key}`: {e}")))
    }
}

/// Per-dimension bounds and moments of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// Bounds over both `s` and `s_next`.
    pub obs_min: Vec<f64>,
    pub obs_max: Vec<f64>,
    pub reward_min: f64,
    pub reward_max: f64,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, xs: impl Iterator<Item = f64>) {
        self.n += 1.0;
        for ((x, mean), m2) in xs.zip(&mut self.mean).zip(&mut self.m2) {
            let d = x - *mean;
            *mean += d / self.n;
            *m2 += d * (x - *mean);
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let std = self
            .m2
            .iter()
            .map(|m2| (m2 / self.n).sqrt().max(STD_FLOOR))
            .collect();
        (self.mean, std)
    }
}

/// Empirical bounds and population moments (Welford), with standard deviations floored at
/// [`STD_FLOOR`].
pub fn compute_stats(dataset: &Dataset) -> DatasetStats {
    let od = dataset.obs_dim;
    let mut obs_min = vec![f64::INFINITY; od];
    let mut obs_max = vec![f64::NEG_INFINITY; od];
    let mut reward_min = f64::INFINITY;
    let mut reward_max = f64::NEG_INFINITY;
    let mut obs = Moments::new(od);
    let mut act = Moments::new(dataset.act_dim);
    let mut delta = Moments::new(od);
    let mut reward = Moments::new(1);
    for t in &dataset.transitions {
        for s in [&t.s, &t.s_next] {
            for (k, &v) in s.0.iter().enumerate() {
                obs_min[k] = obs_min[k].min(v);
                obs_max[k] = obs_max[k].max(v);
            }
        }
        reward_min = reward_min.min(t.r);
        reward_max = reward_max.max(t.r);
        obs.push(t.s.0.iter().copied());
        act.push(t.a.0.iter().copied());
        delta.push(t.s_next.0.iter().zip(&t.s.0).map(|(b, a)| b - a));
        reward.push(std::iter::once(t.r));
    }
    let (obs_mean, obs_std) = obs.finish();
    let (act_mean, act_std) = act.finish();
    let (delta_mean, delta_std) = delta.finish();
    let (reward_mean, reward_std) = reward.finish();
    DatasetStats {
        obs_min,
        obs_max,
        reward_min,
        reward_max,
        obs_mean,
        obs_std,
        act_mean,
        act_std,
        delta_mean,
        delta_std,
        reward_mean: reward_mean[0],
        reward_std: reward_std[0],
    }
}

/// `|D|` draws with replacement.
pub fn bootstrap_resample(dataset: &Dataset, seed: u64) -> Dataset {
    let mut rng = rng::seeded(seed);
    let n = dataset.len();
    let transitions = (0..n)
        .map(|_| dataset.transitions[rng.gen_range(0..n)].clone())
        .collect();
    Dataset {
        transitions,
        ..dataset.clone_meta()
    }
}

impl Dataset {
    fn clone_meta(&self) -> Dataset {
        Dataset {
            transitions: Vec::new(),
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            name: self.name.clone(),
            env_id: self.env_id.clone(),
            seed: self.seed,
        }
    }
}

/// Concatenates episodes driven round-robin by `behaviors` until `n_transitions` are recorded.
pub fn collect_dataset(
    env: &dyn Environment,
    behaviors: &[SharedPolicy],
    n_transitions: usize,
    name: &str,
    seed: u64,
) -> Result<Dataset> {
    if n_transitions == 0 || behaviors.is_empty() {
        return Err(Error::InvalidArgument(
            "collect_dataset needs n >= 1 and a behavior policy".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut episode = 0;
    while transitions.len() < n_transitions {
        let policy = &behaviors[episode % behaviors.len()];
        let mut s = env.initial_state(&mut rng);
        for t in 0..env.max_steps() {
            if transitions.len() == n_transitions || env.is_terminal(&s) {
                break;
            }
            let a = policy.act(&s, t, &mut rng);
            let out = env.step(&s, &a, &mut rng)?;
            transitions.push(Transition {
                s: s.clone(),
                a,
                s_next: out.next.clone(),
                r: out.reward,
                terminal: out.terminal,
            });
            if out.terminal {
                break;
            }
            s = out.next;
        }
        episode += 1;
    }
    Dataset::new(
        transitions,
        env.obs_dim(),
        env.act_dim(),
        name,
        env.id(),
        seed,
    )
}

pub const DATASET_NAMES: [&str; 5] = ["random", "medium", "expert", "mixed", "replay"];

/// Behavior policies behind each named dataset type, ordered from worst to best for `replay`.
/// These are deliberately different from the query policy family.
pub fn behavior_policies(env: &EnvSpec, name: &str) -> Result<Vec<SharedPolicy>> {
    let random = env.random_policy();
    let (medium, expert, ladder): (SharedPolicy, SharedPolicy, Vec<SharedPolicy>) = match env {
        EnvSpec::Chain(_) => {
            let p = |id: &str, b: f64| -> SharedPolicy { Arc::new(BiasedChainPolicy::new(id, b)) };
            (
                p("behavior-medium", 0.7),
                p("behavior-expert", 0.9),
                [0.5, 0.6, 0.7, 0.8, 0.9]
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| p(&format!("behavior-replay-{i}"), b))
                    .collect(),
            )
        }
        EnvSpec::PointMaze(m) => {
            let c = |id: &str, gain: f64, noise: f64| -> SharedPolicy {
                Arc::new(GoalSeekingController::new(id, m, gain, noise))
            };
            (
                c("behavior-medium", 0.8, 0.8),
                c("behavior-expert", 2.0, 0.2),
                [(0.3, 1.0), (0.6, 0.8), (1.0, 0.6), (1.5, 0.4), (2.0, 0.2)]
                    .iter()
                    .enumerate()
                    .map(|(i, &(g, n))| c(&format!("behavior-replay-{i}"), g, n))
                    .collect(),
            )
        }
    };
    match name {
        "random" => Ok(vec![random]),
        "medium" => Ok(vec![medium]),
        "expert" => Ok(vec![expert]),
        "mixed" => Ok(vec![random, medium, expert]),
        "replay" => Ok(ladder),
        other => Err(Error::Config(format!(
            "unknown dataset type `{other}` (expected one of {DATASET_NAMES:?})"
        ))),
    }
}

/// Collects a named dataset type. `replay` concatenates equal chunks from progressively better
/// controllers; the others alternate episodes between their behaviors.
pub fn collect_named_dataset(
    env: &EnvSpec,
    name: &str,
    n_transitions: usize,
    seed: u64,
) -> Result<Dataset> {
    let behaviors = behavior_policies(env, name)?;
    if name != "replay" {
        return collect_dataset(env, &behaviors, n_transitions, name, seed);
    }
    let k = behaviors.len();
    let mut transitions = Vec::with_capacity(n_transitions);
    for (i, b) in behaviors.iter().enumerate() {
        let chunk = n_transitions * (i + 1) / k - n_transitions * i / k;
        if chunk == 0 {
            continue;
        }
        let part = collect_dataset(
            env,
            std::slice::from_ref(b),
            chunk,
            name,
            rng::derive(seed, i as u64),
        )?;
        transitions.extend(part.transitions);
    }
    Dataset::new(
        transitions,
        env.obs_dim(),
        env.act_dim(),
        name,
        env.id(),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ChainWorld;
    use proptest::prelude::*;

    fn tr(s: f64, s2: f64) -> Transition {
        Transition {
            s: EnvState(vec![s]),
            a: EnvAction(vec![1.0]),
            s_next: EnvState(vec![s2]),
            r: 0.5,
            terminal: false,
        }
    }

    #[test]
    fn exact_length() {
        let env = EnvSpec::by_name("chain").unwrap();
        let d = collect_named_dataset(&env, "mixed", 10, 3).unwrap();
        assert_eq!(d.len(), 10);
        let d = collect_named_dataset(&env, "replay", 13, 3).unwrap();
        assert_eq!(d.len(), 13);
    }

    #[test]
    fn deterministic_chain_matches_hand_unrolled_trajectory() {
        let env = ChainWorld::goal_chain(4, 1.0, 5);
        let always_right: SharedPolicy = Arc::new(BiasedChainPolicy::new("right", 1.0));
        let d = collect_dataset(&env, &[always_right], 6, "expert", 0).unwrap();
        let got: Vec<(f64, f64, f64)> = d
            .transitions
            .iter()
            .map(|t| (t.s.0[0], t.s_next.0[0], t.r))
            .collect();
        // 0 -> 1 -> 2 -> 3 (goal, absorbing, reward 1 per step there) ... then a new episode.
        assert_eq!(
            got,
            vec![
                (0.0, 1.0, 0.0),
                (1.0, 2.0, 0.0),
                (2.0, 3.0, 0.0),
                (3.0, 3.0, 1.0),
                (3.0, 3.0, 1.0),
                (0.0, 1.0, 0.0)
            ]
        );
    }

    #[test]
    fn stats_single_transition() {
        let d = Dataset::new(vec![tr(3.0, 3.0)], 1, 1, "t", "chain", 0).unwrap();
        let st = compute_stats(&d);
        assert_eq!(st.obs_min, vec![3.0]);
        assert_eq!(st.obs_max, vec![3.0]);
        assert_eq!(st.obs_std, vec![STD_FLOOR]);
        assert_eq!(st.delta_std, vec![STD_FLOOR]);
    }

    #[test]
    fn stats_two_transitions() {
        let d = Dataset::new(vec![tr(0.0, 0.0), tr(2.0, 2.0)], 1, 1, "t", "chain", 0).unwrap();
        let st = compute_stats(&d);
        assert_eq!(st.obs_mean, vec![1.0]);
        assert_eq!(st.obs_std, vec![1.0]);
        assert_eq!(st.obs_min, vec![0.0]);
        assert_eq!(st.obs_max, vec![2.0]);
    }

    #[test]
    fn bootstrap_of_singleton() {
        let d = Dataset::new(vec![tr(1.0, 2.0)], 1, 1, "t", "chain", 0).unwrap();
        let b = bootstrap_resample(&d, 11);
        assert_eq!(b.transitions, d.transitions);
    }

    #[test]
    fn bootstrap_distinct_fraction() {
        let transitions: Vec<Transition> = (0..10_000).map(|i| tr(i as f64, i as f64)).collect();
        let d = Dataset::new(transitions, 1, 1, "t", "chain", 0).unwrap();
        let mut total = 0.0;
        for seed in 0..20 {
            let b = bootstrap_resample(&d, seed);
            assert_eq!(b.len(), d.len());
            let mut seen = vec![false; d.len()];
            for t in &b.transitions {
                seen[t.s.0[0] as usize] = true;
            }
            total += seen.iter().filter(|&&x| x).count() as f64 / d.len() as f64;
        }
        let frac = total / 20.0;
        assert!((frac - (1.0 - (-1.0f64).exp())).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let mut bad = tr(0.0, 1.0);
        bad.s_next = EnvState(vec![0.0, 1.0]);
        assert!(Dataset::new(vec![tr(0.0, 1.0), bad], 1, 1, "t", "chain", 0).is_err());
        assert!(Dataset::new(vec![], 1, 1, "t", "chain", 0).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text =
            "opcc-dataset version=1 obs_dim=1 act_dim=1 name=x env=chain seed=0 n=1\n0 1 1 0.5\n";
        let err = Dataset::from_text(text, "d.txt").unwrap_err().to_string();
        assert!(err.starts_with("d.txt:2:"), "{err}");
    }

    #[test]
    fn unknown_dataset_type() {
        let env = EnvSpec::by_name("chain").unwrap();
        assert!(behavior_policies(&env, "medium-expert").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn text_round_trip_is_bitwise(
            rows in prop::collection::vec((prop::array::uniform4(-1e6f64..1e6), prop::array::uniform2(-5f64..5.0), any::<bool>()), 1..20),
            seed in any::<u64>(),
        ) {
            let transitions: Vec<Transition> = rows
                .iter()
                .map(|(s, a, term)| Transition {
                    s: EnvState(s.to_vec()),
                    a: EnvAction(a.to_vec()),
                    s_next: EnvState(s.iter().map(|v| v * 0.3 + 1e-9).collect()),
                    r: s[0] / 7.0,
                    terminal: *term,
                })
                .collect();
            let d = Dataset::new(transitions, 4, 2, "mixed", "maze-open", seed).unwrap();
            let back = Dataset::from_text(&d.to_text(), "mem").unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn stats_bound_every_record(seed in 0u64..1000) {
            let env = EnvSpec::by_name("maze-open").unwrap();
            let d = collect_named_dataset(&env, "mixed", 300, seed).unwrap();
            let st = compute_stats(&d);
            for t in &d.transitions {
                for s in [&t.s, &t.s_next] {
                    for k in 0..4 {
                        prop_assert!(st.obs_min[k] <= s.0[k] && s.0[k] <= st.obs_max[k]);
                    }
                }
                prop_assert!(st.reward_min <= t.r && t.r <= st.reward_max);
            }
        }
    }
}
