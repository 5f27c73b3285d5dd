//! Ablation sweeps: one axis varied at a time around the default settings, every cell run for
//! every seed, and per-seed metrics aggregated into means with t-based 95% intervals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::ValuePairs;
use crate::dynamics::{BaseModelConfig, Ensemble, ModelKind};
use crate::metrics::RiskCoverageCurve;
use crate::querygen::{PolicyFamily, QuerySet};
use crate::special::t_quantile;
use crate::{par, rng, Error, Result};

use super::config::ExperimentConfig;
use super::pipeline::{answer_all, applicable, score, train, value_pairs, HorizonSel, Inputs};

/// Model and data settings of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dataset: String,
    pub ensemble_count: usize,
    pub prior_scale: f64,
    pub kind: ModelKind,
    pub normalize: bool,
}

impl Settings {
    fn training_key(&self) -> (String, ModelKind, u64, bool) {
        (
            self.dataset.clone(),
            self.kind,
            self.prior_scale.to_bits(),
            self.normalize,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub axis: &'static str,
    pub settings: Settings,
    pub horizons: Vec<HorizonSel>,
}

/// The default cell, then one cell per value of each nonempty axis. The horizon axis reports the
/// default cell split by horizon and is always present.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let base = Settings {
        dataset: config.dataset.kind.clone(),
        ensemble_count: config.model.ensemble_size,
        prior_scale: config.model.base.prior_scale,
        kind: config.model.base.kind,
        normalize: config.model.base.normalize,
    };
    let all = vec![HorizonSel::All];
    let cell = |axis, settings| Cell {
        axis,
        settings,
        horizons: all.clone(),
    };
    let axes = &config.sweep;
    let horizons = if axes.horizon.is_empty() {
        &config.queries.horizons
    } else {
        &axes.horizon
    };
    let mut out = vec![
        cell("default", base.clone()),
        Cell {
            axis: "horizon",
            settings: base.clone(),
            horizons: horizons.iter().map(|&h| HorizonSel::H(h)).collect(),
        },
    ];
    for d in &axes.dataset {
        out.push(cell(
            "dataset",
            Settings {
                dataset: d.clone(),
                ..base.clone()
            },
        ));
    }
    for &k in &axes.ensemble_count {
        out.push(cell(
            "ensemble_count",
            Settings {
                ensemble_count: k,
                ..base.clone()
            },
        ));
    }
    for &p in &axes.prior_scale {
        out.push(cell(
            "prior_scale",
            Settings {
                prior_scale: p,
                ..base.clone()
            },
        ));
    }
    for &kind in &axes.kind {
        out.push(cell(
            "kind",
            Settings {
                kind,
                ..base.clone()
            },
        ));
    }
    for &det in &axes.deterministic {
        let kind = if det {
            ModelKind::DeterministicFf
        } else {
            ModelKind::GaussianFf
        };
        out.push(cell(
            "deterministic",
            Settings {
                kind,
                ..base.clone()
            },
        ));
    }
    for &normalize in &axes.normalize {
        out.push(cell(
            "normalize",
            Settings {
                normalize,
                ..base.clone()
            },
        ));
    }
    out
}

/// One line of the per-seed metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub axis: String,
    pub env: String,
    pub dataset_name: String,
    pub horizon: String,
    pub method: String,
    pub ensemble_count: usize,
    pub prior_scale: f64,
    pub dynamics_kind: String,
    pub deterministic: bool,
    pub normalize: bool,
    pub seed: u64,
    pub aurcc: f64,
    pub rpp: f64,
    pub cr_k: f64,
    pub loss_full_coverage: f64,
}

impl MetricsRow {
    /// The swept value this row stands for.
    pub fn setting(&self) -> String {
        self.key().setting()
    }

    pub fn key(&self) -> CellKey {
        CellKey {
            axis: self.axis.clone(),
            env: self.env.clone(),
            dataset_name: self.dataset_name.clone(),
            horizon: self.horizon.clone(),
            method: self.method.clone(),
            ensemble_count: self.ensemble_count,
            prior_scale: self.prior_scale,
            dynamics_kind: self.dynamics_kind.clone(),
            deterministic: self.deterministic,
            normalize: self.normalize,
        }
    }

    pub fn metrics(&self) -> [f64; 4] {
        [self.aurcc, self.rpp, self.cr_k, self.loss_full_coverage]
    }

    /// File name of this row's risk-coverage curve.
    pub fn rcc_file_name(&self) -> String {
        let setting: String = self
            .setting()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!(
            "{}_{}_{}_h{}_{}_m{}_seed{}.csv",
            self.env, self.axis, setting, self.horizon, self.method, self.ensemble_count, self.seed
        )
    }
}

/// Everything identifying a cell except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub axis: String,
    pub env: String,
    pub dataset_name: String,
    pub horizon: String,
    pub method: String,
    pub ensemble_count: usize,
    pub prior_scale: f64,
    pub dynamics_kind: String,
    pub deterministic: bool,
    pub normalize: bool,
}

impl CellKey {
    /// The swept value this row stands for.
    pub fn setting(&self) -> String {
        match self.axis.as_str() {
            "dataset" => self.dataset_name.clone(),
            "ensemble_count" => self.ensemble_count.to_string(),
            "prior_scale" => self.prior_scale.to_string(),
            "kind" => self.dynamics_kind.clone(),
            "deterministic" => self.deterministic.to_string(),
            "normalize" => self.normalize.to_string(),
            "horizon" => self.horizon.clone(),
            _ => "-".into(),
        }
    }
}

pub struct SweepResult {
    pub rows: Vec<MetricsRow>,
    /// Risk-coverage curve of each row, in row order.
    pub curves: Vec<RiskCoverageCurve>,
}

/// Metrics rows for one trained ensemble's value pairs.
#[allow(clippy::too_many_arguments)]
pub fn cell_rows(
    config: &ExperimentConfig,
    queries: &QuerySet,
    axis: &str,
    settings: &Settings,
    horizons: &[HorizonSel],
    pairs: &[ValuePairs],
    seed: u64,
    out: &mut SweepResult,
) -> Result<()> {
    let k = settings.ensemble_count;
    for &method in &config.evaluation.methods {
        if !applicable(method, k) {
            continue;
        }
        let answers = answer_all(pairs, method, k, config.evaluation.upci_df)?;
        for (sel, (summary, curve)) in score(queries, &answers, horizons, config.evaluation.cr_k)? {
            out.rows.push(MetricsRow {
                axis: axis.to_string(),
                env: config.env.clone(),
                dataset_name: settings.dataset.clone(),
                horizon: sel.to_string(),
                method: method.name().to_string(),
                ensemble_count: k,
                prior_scale: settings.prior_scale,
                dynamics_kind: settings.kind.name().to_string(),
                deterministic: settings.kind == ModelKind::DeterministicFf,
                normalize: settings.normalize,
                seed,
                aurcc: summary.aurcc,
                rpp: summary.rpp,
                cr_k: summary.cr_k,
                loss_full_coverage: summary.loss_full_coverage,
            });
            out.curves.push(curve);
        }
    }
    Ok(())
}

/// Cells sharing data and model settings share one ensemble per seed, trained at the largest
/// ensemble count any of them needs; smaller counts use its leading members.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    let inputs = Inputs::build(config, jobs)?;
    run_sweep_with(config, &inputs, jobs)
}

pub fn run_sweep_with(
    config: &ExperimentConfig,
    inputs: &Inputs,
    jobs: usize,
) -> Result<SweepResult> {
    let cells = cells(config);
    let mut groups: Vec<(Settings, usize)> = Vec::new();
    let mut group_of = Vec::with_capacity(cells.len());
    for c in &cells {
        let key = c.settings.training_key();
        match groups.iter().position(|(s, _)| s.training_key() == key) {
            Some(g) => {
                groups[g].1 = groups[g].1.max(c.settings.ensemble_count);
                group_of.push(g);
            }
            None => {
                groups.push((c.settings.clone(), c.settings.ensemble_count));
                group_of.push(groups.len() - 1);
            }
        }
    }
    let tasks: Vec<(usize, u64)> = (0..groups.len())
        .flat_map(|g| config.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let pairs = par::map_ordered(&tasks, jobs, |_, &(g, seed)| {
        let (settings, m) = &groups[g];
        let base = BaseModelConfig {
            kind: settings.kind,
            prior_scale: settings.prior_scale,
            normalize: settings.normalize,
            ..config.model.base.clone()
        };
        let dataset = &inputs.datasets[&settings.dataset];
        let ensemble = train(&inputs.env, dataset, &base, *m, seed, 1)?;
        value_pairs(
            &ensemble,
            &inputs.family,
            &inputs.queries,
            config.evaluation.n_rollouts_per_member,
            config.evaluation.rollout_mode,
            evaluation_seed(seed),
            1,
        )
    })?;
    let by_task: BTreeMap<(usize, u64), Vec<ValuePairs>> = tasks.into_iter().zip(pairs).collect();

    let mut out = SweepResult {
        rows: Vec::new(),
        curves: Vec::new(),
    };
    for (c, &g) in cells.iter().zip(&group_of) {
        for &seed in &config.seeds {
            let pairs = &by_task[&(g, seed)];
            cell_rows(
                config,
                &inputs.queries,
                c.axis,
                &c.settings,
                &c.horizons,
                pairs,
                seed,
                &mut out,
            )?;
        }
    }
    Ok(out)
}

/// Value pairs of an already trained ensemble, seeded as in a sweep with experiment seed `seed`.
pub fn ensemble_pairs(
    config: &ExperimentConfig,
    ensemble: &Ensemble,
    family: &PolicyFamily,
    queries: &QuerySet,
    seed: u64,
    jobs: usize,
) -> Result<Vec<ValuePairs>> {
    let eval = &config.evaluation;
    value_pairs(
        ensemble,
        family,
        queries,
        eval.n_rollouts_per_member,
        eval.rollout_mode,
        evaluation_seed(seed),
        jobs,
    )
}

/// Default-axis and per-horizon rows for the value pairs of `ensemble`.
pub fn ensemble_rows(
    config: &ExperimentConfig,
    ensemble: &Ensemble,
    queries: &QuerySet,
    pairs: &[ValuePairs],
    seed: u64,
) -> Result<SweepResult> {
    let first = ensemble
        .members
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot evaluate an empty ensemble".into()))?;
    let settings = Settings {
        dataset: ensemble.dataset.clone(),
        ensemble_count: ensemble.len(),
        prior_scale: first.config.prior_scale,
        kind: first.config.kind,
        normalize: first.config.normalize,
    };
    let mut out = SweepResult {
        rows: Vec::new(),
        curves: Vec::new(),
    };
    let per_horizon: Vec<HorizonSel> = queries.horizons.iter().map(|&h| HorizonSel::H(h)).collect();
    cell_rows(
        config,
        queries,
        "default",
        &settings,
        &[HorizonSel::All],
        pairs,
        seed,
        &mut out,
    )?;
    cell_rows(
        config,
        queries,
        "horizon",
        &settings,
        &per_horizon,
        pairs,
        seed,
        &mut out,
    )?;
    Ok(out)
}

pub fn evaluate_ensemble(
    config: &ExperimentConfig,
    ensemble: &Ensemble,
    family: &PolicyFamily,
    queries: &QuerySet,
    seed: u64,
    jobs: usize,
) -> Result<SweepResult> {
    if ensemble.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty ensemble".into(),
        ));
    }
    let pairs = ensemble_pairs(config, ensemble, family, queries, seed, jobs)?;
    ensemble_rows(config, ensemble, queries, &pairs, seed)
}

/// Rollout seed root for experiment seed `seed`; shared by all cells so they see common random
/// numbers.
pub fn evaluation_seed(seed: u64) -> u64 {
    rng::derive(seed, u64::MAX)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        return Err(Error::EmptyResult("no metrics rows".into()));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    parse_metrics_csv(&fs::read_to_string(path)?)
}

/// Mean and 95% interval half-width of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// `None` with a single seed.
    pub half_width: Option<f64>,
}

impl Estimate {
    /// `t_{0.975, n-1} s / sqrt(n)` with the sample standard deviation `s`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no values to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() == 1 {
            return Ok(Self {
                mean,
                half_width: None,
            });
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let t = t_quantile(0.975, values.len() as u32 - 1)?;
        Ok(Self {
            mean,
            half_width: Some(t * var.sqrt() / n.sqrt()),
        })
    }
}

pub const METRIC_NAMES: [&str; 4] = ["aurcc", "rpp", "cr_k", "loss_full_coverage"];

/// Per-cell estimates in order of first appearance.
pub fn aggregate(rows: &[MetricsRow]) -> Result<Vec<(CellKey, usize, [Estimate; 4])>> {
    let mut keys: Vec<CellKey> = Vec::new();
    let mut values: Vec<Vec<[f64; 4]>> = Vec::new();
    for r in rows {
        let key = r.key();
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.metrics()),
            None => {
                keys.push(key);
                values.push(vec![r.metrics()]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|(k, v)| {
            let est = |j: usize| Estimate::from_values(&v.iter().map(|m| m[j]).collect::<Vec<_>>());
            Ok((k, v.len(), [est(0)?, est(1)?, est(2)?, est(3)?]))
        })
        .collect()
}

/// Serializes as the half-width or the marker `n/a`.
struct HalfWidth(Option<f64>);

impl Serialize for HalfWidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("n/a"),
        }
    }
}

#[derive(Serialize)]
struct SummaryColumns {
    n_seeds: usize,
    aurcc_mean: f64,
    aurcc_ci95: HalfWidth,
    rpp_mean: f64,
    rpp_ci95: HalfWidth,
    cr_k_mean: f64,
    cr_k_ci95: HalfWidth,
    loss_full_coverage_mean: f64,
    loss_full_coverage_ci95: HalfWidth,
}

pub fn summary_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (key, n_seeds, [a, r, c, l]) in aggregate(rows)? {
        w.serialize((
            key,
            SummaryColumns {
                n_seeds,
                aurcc_mean: a.mean,
                aurcc_ci95: HalfWidth(a.half_width),
                rpp_mean: r.mean,
                rpp_ci95: HalfWidth(r.half_width),
                cr_k_mean: c.mean,
                cr_k_ci95: HalfWidth(c.half_width),
                loss_full_coverage_mean: l.mean,
                loss_full_coverage_ci95: HalfWidth(l.half_width),
            },
        ))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `metrics.csv`, `summary.csv` and one curve per row under `rcc/`.
pub fn write_results(result: &SweepResult, out_dir: &Path) -> Result<()> {
    let rcc_dir = out_dir.join("rcc");
    fs::create_dir_all(&rcc_dir)?;
    fs::write(out_dir.join("metrics.csv"), metrics_csv(&result.rows)?)?;
    fs::write(out_dir.join("summary.csv"), summary_csv(&result.rows)?)?;
    for (row, curve) in result.rows.iter().zip(&result.curves) {
        fs::write(rcc_dir.join(row.rcc_file_name()), curve.to_csv())?;
    }
    Ok(())
}
