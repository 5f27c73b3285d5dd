//! From ensemble value estimates to a prediction and a confidence in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_value, DynamicsModel, RolloutMode, Termination};
use crate::mdp::{EnvState, Policy};
use crate::special::t_cdf;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ev,
    Pci,
    UPci,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ev, Method::Pci, Method::UPci];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ev => "ev",
            Method::Pci => "pci",
            Method::UPci => "u-pci",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{name}` (expected ev, pci or u-pci)"
                ))
            })
    }
}

/// Degrees of freedom for the unpaired interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpciDf {
    /// `M - 1`.
    #[default]
    MMinusOne,
    /// Welch-Satterthwaite, floored to an integer and at least 1.
    Welch,
}

/// Per-member value estimates `(V_i, V_hat_i)` of the two sides of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePairs {
    pub pairs: Vec<(f64, f64)>,
}

impl ValuePairs {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument("value pairs must be finite".into()));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The first `k` pairs, i.e. the estimates of an ensemble made of the first `k` members.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix {k} of {} pairs",
                self.len()
            )));
        }
        Ok(Self {
            pairs: self.pairs[..k].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryAnswer {
    /// `true` predicts `V(s, h) < V_hat(s_hat, h)`.
    pub prediction: bool,
    pub confidence: f64,
    pub method: Method,
}

pub fn answer(method: Method, pairs: &ValuePairs, upci_df: UpciDf) -> Result<QueryAnswer> {
    match method {
        Method::Ev => Ok(confidence_ev(pairs)),
        Method::Pci => confidence_pci(pairs),
        Method::UPci => confidence_upci_with(pairs, upci_df),
    }
}

/// Majority vote of `V_i < V_hat_i`, with agreement rescaled from `[0.5, 1]` to `[0, 1]`. An even
/// split predicts 0 with confidence 0.
pub fn confidence_ev(pairs: &ValuePairs) -> QueryAnswer {
    let m = pairs.len();
    let less = pairs.pairs.iter().filter(|(a, b)| a < b).count();
    let (prediction, confidence) = if 2 * less == m {
        (false, 0.0)
    } else {
        let majority = less.max(m - less);
        (2 * less > m, 2.0 * (majority as f64 / m as f64 - 0.5))
    };
    QueryAnswer {
        prediction,
        confidence,
        method: Method::Ev,
    }
}

fn mean_and_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = xs.clone().count();
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var, n)
}

/// `2 F_t(stat; df) - 1`, with the zero-spread limits: 1 when the means differ, else 0.
fn two_sided(diff: f64, spread: f64, stat: impl FnOnce() -> f64, df: u32) -> Result<f64> {
    if spread == 0.0 {
        return Ok(if diff != 0.0 { 1.0 } else { 0.0 });
    }
    Ok((2.0 * t_cdf(stat(), df)? - 1.0).clamp(0.0, 1.0))
}

fn need_two(pairs: &ValuePairs) -> Result<()> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: pairs.len(),
        });
    }
    Ok(())
}

/// Paired t-interval on `d_i = V_i - V_hat_i`: the confidence is the largest level whose
/// interval excludes 0.
pub fn confidence_pci(pairs: &ValuePairs) -> Result<QueryAnswer> {
    need_two(pairs)?;
    let (mean, var, m) = mean_and_var(pairs.pairs.iter().map(|(a, b)| a - b));
    let sd = var.sqrt();
    let confidence = two_sided(
        mean,
        sd,
        || mean.abs() * (m as f64).sqrt() / sd,
        m as u32 - 1,
    )?;
    Ok(QueryAnswer {
        prediction: mean < 0.0,
        confidence,
        method: Method::Pci,
    })
}

/// Unpaired intervals `m +- t se` and `m_hat +- t se_hat`: the confidence is the largest level at
/// which they do not overlap. Uses `M - 1` degrees of freedom.
pub fn confidence_upci(pairs: &ValuePairs) -> Result<QueryAnswer> {
    confidence_upci_with(pairs, UpciDf::MMinusOne)
}

pub fn confidence_upci_with(pairs: &ValuePairs, df_rule: UpciDf) -> Result<QueryAnswer> {
    need_two(pairs)?;
    let (ma, va, m) = mean_and_var(pairs.pairs.iter().map(|p| p.0));
    let (mb, vb, _) = mean_and_var(pairs.pairs.iter().map(|p| p.1));
    let n = m as f64;
    let (sea, seb) = ((va / n).sqrt(), (vb / n).sqrt());
    let df = match df_rule {
        UpciDf::MMinusOne => m as u32 - 1,
        UpciDf::Welch => {
            let (qa, qb) = (va / n, vb / n);
            let denom = (qa * qa + qb * qb) / (n - 1.0);
            if denom > 0.0 {
                (((qa + qb).powi(2) / denom).floor() as u32).max(1)
            } else {
                m as u32 - 1
            }
        }
    };
    let diff = ma - mb;
    let confidence = two_sided(diff, sea + seb, || diff.abs() / (sea + seb), df)?;
    Ok(QueryAnswer {
        prediction: ma < mb,
        confidence,
        method: Method::UPci,
    })
}

/// Both sides of one comparison, resolved to concrete policies.
pub struct Comparison<'a> {
    pub s: &'a EnvState,
    pub policy: &'a dyn Policy,
    pub s_hat: &'a EnvState,
    pub policy_hat: &'a dyn Policy,
    pub horizon: usize,
}

/// `V_i` and `V_hat_i` as means of `n_rollouts` model rollouts through member `i`. Both sides of
/// member `i` replay the same generator, seeded with `seed + i`.
pub fn estimate_value_pairs<M: DynamicsModel>(
    members: &[M],
    termination: &Termination,
    q: &Comparison<'_>,
    gamma: f64,
    n_rollouts: usize,
    mode: RolloutMode,
    seed: u64,
) -> Result<ValuePairs> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument(
            "n_rollouts_per_member must be at least 1".into(),
        ));
    }
    let side = |model: &M, policy: &dyn Policy, s: &EnvState, child: u64| {
        let mut g = rng::seeded(child);
        let total: f64 = (0..n_rollouts)
            .map(|_| {
                rollout_value(
                    model,
                    policy,
                    s,
                    q.horizon,
                    gamma,
                    mode,
                    termination,
                    &mut g,
                )
            })
            .sum();
        total / n_rollouts as f64
    };
    let pairs = members
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let child = seed.wrapping_add(i as u64);
            (
                side(model, q.policy, q.s, child),
                side(model, q.policy_hat, q.s_hat, child),
            )
        })
        .collect();
    ValuePairs::new(pairs)
}
