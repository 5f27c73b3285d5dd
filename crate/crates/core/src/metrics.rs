//! Selective-prediction metrics over answered queries: coverage, selective risk, the
//! risk-coverage curve (RCC), its area (AURCC), reverse pair proportion (RPP) and coverage
//! resolution (CR_K).

use std::fmt::Write as _;

use crate::{Error, Result};

/// Confidence of an answer and the loss of its prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnsweredQuery {
    pub confidence: f64,
    pub loss: f64,
}

impl AnsweredQuery {
    pub fn new(confidence: f64, loss: f64) -> Self {
        Self { confidence, loss }
    }

    /// Scores `prediction` against `label` with `loss`.
    pub fn scored(
        confidence: f64,
        prediction: bool,
        label: bool,
        loss: impl Fn(bool, bool) -> f64,
    ) -> Self {
        Self {
            confidence,
            loss: loss(prediction, label),
        }
    }
}

/// The 0/1 loss.
pub fn zero_one_loss(prediction: bool, label: bool) -> f64 {
    if prediction == label {
        0.0
    } else {
        1.0
    }
}

fn ensure_nonempty(answers: &[AnsweredQuery]) -> Result<()> {
    if answers.is_empty() {
        return Err(Error::InvalidArgument(
            "metrics need at least one answered query".into(),
        ));
    }
    Ok(())
}

/// Fraction of queries with confidence at least `tau`.
pub fn coverage(answers: &[AnsweredQuery], tau: f64) -> Result<f64> {
    ensure_nonempty(answers)?;
    let covered = answers.iter().filter(|a| a.confidence >= tau).count();
    Ok(covered as f64 / answers.len() as f64)
}

/// Average loss over the queries with confidence at least `tau`.
pub fn selective_risk(answers: &[AnsweredQuery], tau: f64) -> Result<f64> {
    ensure_nonempty(answers)?;
    let (count, loss) = answers
        .iter()
        .filter(|a| a.confidence >= tau)
        .fold((0usize, 0.0), |(n, l), a| (n + 1, l + a.loss));
    if count == 0 {
        return Err(Error::UndefinedRisk(tau));
    }
    Ok(loss / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RccPoint {
    /// Threshold inducing this point; `+inf` for the zero-coverage origin.
    pub threshold: f64,
    pub coverage: f64,
    pub risk: f64,
}

/// Operating points ordered by coverage, from `(0, 0)` to `(1, r_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCoverageCurve {
    pub points: Vec<RccPoint>,
}

impl RiskCoverageCurve {
    pub fn full_coverage_risk(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.risk)
    }

    /// `threshold,coverage,risk` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,coverage,risk\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.coverage, p.risk).unwrap();
        }
        out
    }
}

/// Sweeps the distinct confidence values in descending order. Each threshold covers a strictly
/// larger set than the previous one, so coverages are strictly increasing.
pub fn build_rcc(answers: &[AnsweredQuery]) -> Result<RiskCoverageCurve> {
    ensure_nonempty(answers)?;
    let mut sorted: Vec<AnsweredQuery> = answers.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let n = sorted.len() as f64;
    let mut points = vec![RccPoint {
        threshold: f64::INFINITY,
        coverage: 0.0,
        risk: 0.0,
    }];
    let mut covered = 0usize;
    let mut loss = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].confidence;
        while i < sorted.len() && sorted[i].confidence == tau {
            loss += sorted[i].loss;
            covered += 1;
            i += 1;
        }
        points.push(RccPoint {
            threshold: tau,
            coverage: covered as f64 / n,
            risk: loss / covered as f64,
        });
    }
    Ok(RiskCoverageCurve { points })
}

/// Trapezoidal area under the linearly interpolated curve.
pub fn aurcc(curve: &RiskCoverageCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| 0.5 * (w[1].coverage - w[0].coverage) * (w[0].risk + w[1].risk))
        .sum()
}

/// Fraction of ordered pairs `(q1, q2)` with `l(q1) < l(q2)` but `c(q1) < c(q2)`.
///
/// Sorting by confidence turns the pair count into a prefix count, `O(n log n)` instead of the
/// direct double loop.
pub fn rpp(answers: &[AnsweredQuery]) -> Result<f64> {
    ensure_nonempty(answers)?;
    let mut sorted: Vec<AnsweredQuery> = answers.to_vec();
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    // Losses seen so far among strictly lower confidences, kept sorted for rank queries.
    let mut lower: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut conflicts = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let c = sorted[i].confidence;
        let group_end = sorted[i..]
            .iter()
            .position(|a| a.confidence != c)
            .map_or(sorted.len(), |k| i + k);
        for a in &sorted[i..group_end] {
            // pairs (q1 lower confidence, q2 = a) with l(q1) < l(a)
            conflicts += lower.partition_point(|&l| l < a.loss);
        }
        for a in &sorted[i..group_end] {
            let pos = lower.partition_point(|&l| l <= a.loss);
            lower.insert(pos, a.loss);
        }
        i = group_end;
    }
    let n = answers.len() as f64;
    Ok(conflicts as f64 / (n * n))
}

/// Fraction of the `k` equal-width coverage bins hit by some threshold. Achieved coverages are
/// those of every distinct confidence plus 0 (a threshold above the maximum). Bins are
/// `[(i-1)/k, i/k)` with the last one closed.
pub fn coverage_resolution(answers: &[AnsweredQuery], k: usize) -> Result<f64> {
    ensure_nonempty(answers)?;
    if k == 0 {
        return Err(Error::InvalidArgument("CR_K needs K >= 1".into()));
    }
    let n = answers.len();
    let mut occupied = vec![false; k];
    // Bin index computed from the integer count: floor(count * k / n), capped at k - 1.
    let mut mark = |count: usize| occupied[(count * k / n).min(k - 1)] = true;
    mark(0);
    let mut confs: Vec<f64> = answers.iter().map(|a| a.confidence).collect();
    confs.sort_by(|a, b| b.total_cmp(a));
    let mut i = 0;
    while i < n {
        let c = confs[i];
        while i < n && confs[i] == c {
            i += 1;
        }
        mark(i);
    }
    Ok(occupied.iter().filter(|&&o| o).count() as f64 / k as f64)
}

/// The metrics row reported per evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub aurcc: f64,
    pub rpp: f64,
    pub cr_k: f64,
    pub loss_full_coverage: f64,
}

pub fn summarize(
    answers: &[AnsweredQuery],
    k: usize,
) -> Result<(MetricSummary, RiskCoverageCurve)> {
    let curve = build_rcc(answers)?;
    Ok((
        MetricSummary {
            aurcc: aurcc(&curve),
            rpp: rpp(answers)?,
            cr_k: coverage_resolution(answers, k)?,
            loss_full_coverage: curve.full_coverage_risk(),
        },
        curve,
    ))
}
