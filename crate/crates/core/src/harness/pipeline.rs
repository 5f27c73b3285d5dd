//! The stages of one run: dataset, query set, ensemble training and evaluation.

use std::collections::BTreeMap;

use crate::confidence::{
    answer, estimate_value_pairs, Comparison, Method, QueryAnswer, UpciDf, ValuePairs,
};
use crate::data::{collect_named_dataset, Dataset};
use crate::dynamics::{train_ensemble, BaseModelConfig, Ensemble, RolloutMode, Termination};
use crate::envs::{sample_initial_states, EnvSpec};
use crate::mdp::Environment;
use crate::metrics::{summarize, zero_one_loss, AnsweredQuery, MetricSummary, RiskCoverageCurve};
use crate::querygen::{
    generate_candidates, label_filter_select, make_policy_family, policy_family, LabelConfig,
    PolicyFamily, QuerySet,
};
use crate::{par, rng, Error, Result};

use super::config::{ExperimentConfig, QuerySpec};

pub fn build_dataset(env: &EnvSpec, kind: &str, size: usize, seed: u64) -> Result<Dataset> {
    collect_named_dataset(env, kind, size, seed)
}

/// Checks the family ordering, samples initial states with the family as generators, then
/// generates, labels and selects queries. Stream `k` of `spec.seed` drives stage `k`.
pub fn build_queries(
    env: &EnvSpec,
    spec: &QuerySpec,
    jobs: usize,
) -> Result<(PolicyFamily, QuerySet)> {
    let family = make_policy_family(env, spec.n_policies, rng::derive(spec.seed, 0))?;
    let states = sample_initial_states(
        env,
        &family.policies,
        spec.n_initial_states,
        rng::derive(spec.seed, 1),
    )?;
    let candidates = generate_candidates(
        spec.n_policies,
        &states,
        &spec.horizons,
        spec.n_candidates,
        rng::derive(spec.seed, 2),
    )?;
    let label = LabelConfig {
        gamma: spec.gamma,
        n_rollouts: spec.n_rollouts,
        gap: spec.gap,
        n_select: spec.n_select,
        seed: rng::derive(spec.seed, 3),
        jobs,
    };
    let queries = label_filter_select(env, &family, &candidates, &spec.horizons, &label)?;
    Ok((family, queries))
}

/// The family a query set refers to, without re-running the ordering check.
pub fn family_for(env: &EnvSpec, queries: &QuerySet) -> Result<PolicyFamily> {
    if queries.env_id != env.id() {
        return Err(Error::Config(format!(
            "queries were generated on `{}` but the environment is `{}`",
            queries.env_id,
            env.id()
        )));
    }
    policy_family(env, queries.n_policies)
}

/// Training seed of the ensemble used with experiment seed `seed`.
pub fn model_seed(base: &BaseModelConfig, seed: u64) -> u64 {
    rng::derive(base.seed, seed)
}

pub fn train(
    env: &EnvSpec,
    dataset: &Dataset,
    base: &BaseModelConfig,
    m: usize,
    seed: u64,
    jobs: usize,
) -> Result<Ensemble> {
    let config = BaseModelConfig {
        seed: model_seed(base, seed),
        ..base.clone()
    };
    train_ensemble(dataset, &config, m, Termination::for_env(env), jobs)
}

/// Per-query value pairs from every member. Query `i` replays rollout seeds derived from
/// `(seed, i)`, so a prefix of the ensemble sees exactly the rollouts it would see alone.
#[allow(clippy::too_many_arguments)]
pub fn value_pairs(
    ensemble: &Ensemble,
    family: &PolicyFamily,
    queries: &QuerySet,
    n_rollouts: usize,
    mode: RolloutMode,
    seed: u64,
    jobs: usize,
) -> Result<Vec<ValuePairs>> {
    par::map_ordered(&queries.queries, jobs, |i, q| {
        let comparison = Comparison {
            s: &q.s,
            policy: family.get(&q.policy_a_id)?.as_ref(),
            s_hat: &q.s_hat,
            policy_hat: family.get(&q.policy_b_id)?.as_ref(),
            horizon: q.horizon,
        };
        estimate_value_pairs(
            &ensemble.members,
            &ensemble.termination,
            &comparison,
            queries.gamma,
            n_rollouts,
            mode,
            rng::derive(seed, i as u64),
        )
    })
}

/// Answers of `method` using the first `k` members, in query order.
pub fn answer_all(
    pairs: &[ValuePairs],
    method: Method,
    k: usize,
    upci_df: UpciDf,
) -> Result<Vec<QueryAnswer>> {
    pairs
        .iter()
        .map(|p| answer(method, &p.prefix(k)?, upci_df))
        .collect()
}

/// One record per query and applicable method: `query,method,prediction,confidence`, plus the
/// member pairs as `v:v_hat` separated by `;` when `dump_pairs` is set.
pub fn answers_csv(
    pairs: &[ValuePairs],
    methods: &[Method],
    upci_df: UpciDf,
    dump_pairs: bool,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["query", "method", "prediction", "confidence"];
    if dump_pairs {
        header.push("pairs");
    }
    w.write_record(&header)?;
    let k = pairs.first().map_or(0, ValuePairs::len);
    for &method in methods.iter().filter(|&&m| applicable(m, k)) {
        for (i, (p, a)) in pairs
            .iter()
            .zip(answer_all(pairs, method, k, upci_df)?)
            .enumerate()
        {
            let mut rec = vec![
                i.to_string(),
                method.name().to_string(),
                u8::from(a.prediction).to_string(),
                a.confidence.to_string(),
            ];
            if dump_pairs {
                let joined: Vec<String> =
                    p.pairs.iter().map(|(v, vh)| format!("{v}:{vh}")).collect();
                rec.push(joined.join(";"));
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Horizon a metrics row covers; `All` pools every horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HorizonSel {
    All,
    H(usize),
}

impl std::fmt::Display for HorizonSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HorizonSel::All => f.write_str("all"),
            HorizonSel::H(h) => write!(f, "{h}"),
        }
    }
}

impl HorizonSel {
    pub fn parse(text: &str) -> Option<Self> {
        if text == "all" {
            Some(HorizonSel::All)
        } else {
            text.parse().ok().map(HorizonSel::H)
        }
    }

    fn admits(self, h: usize) -> bool {
        self == HorizonSel::All || self == HorizonSel::H(h)
    }
}

/// Scores answers against labels and summarizes them for each requested horizon selection.
pub fn score(
    queries: &QuerySet,
    answers: &[QueryAnswer],
    selections: &[HorizonSel],
    cr_k: usize,
) -> Result<BTreeMap<HorizonSel, (MetricSummary, RiskCoverageCurve)>> {
    let mut out = BTreeMap::new();
    for &sel in selections {
        let scored: Vec<AnsweredQuery> = queries
            .queries
            .iter()
            .zip(answers)
            .filter(|(q, _)| sel.admits(q.horizon))
            .map(|(q, a)| AnsweredQuery::scored(a.confidence, a.prediction, q.label, zero_one_loss))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyResult(format!("no queries at horizon {sel}")));
        }
        out.insert(sel, summarize(&scored, cr_k)?);
    }
    Ok(out)
}

/// Methods that can answer with `k` members; interval methods need two.
pub fn applicable(method: Method, k: usize) -> bool {
    k >= 2 || method == Method::Ev
}

/// Dataset, family and queries of a config; shared by every cell and seed of a sweep.
pub struct Inputs {
    pub env: EnvSpec,
    pub family: PolicyFamily,
    pub queries: QuerySet,
    pub datasets: BTreeMap<String, Dataset>,
}

impl Inputs {
    pub fn build(config: &ExperimentConfig, jobs: usize) -> Result<Self> {
        let env = config.env_spec()?;
        let (family, queries) = build_queries(&env, &config.queries, jobs)?;
        let mut datasets = BTreeMap::new();
        for name in std::iter::once(&config.dataset.kind).chain(&config.sweep.dataset) {
            if !datasets.contains_key(name) {
                let d = build_dataset(&env, name, config.dataset.size, config.dataset.seed)?;
                datasets.insert(name.clone(), d);
            }
        }
        Ok(Self {
            env,
            family,
            queries,
            datasets,
        })
    }
}
