//! Browser bindings for three small demos: a risk-coverage explorer, a confidence calculator over
//! ensemble value estimates, and point-maze rollouts under goal-seeking controllers.
//!
//! Each binding wraps a plain function so the logic also runs (and is tested) natively.

use opcc::confidence::{answer, Method, UpciDf, ValuePairs};
use opcc::envs::{GoalSeekingController, PointMaze};
use opcc::mdp::{EnvState, Environment, Policy};
use opcc::metrics::{summarize, AnsweredQuery};
use opcc::rng;
use rand::Rng;
use wasm_bindgen::prelude::*;

/// Risk-coverage curve and metrics of one answer set.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct RccView {
    coverage: Vec<f64>,
    risk: Vec<f64>,
    pub aurcc: f64,
    pub rpp: f64,
    pub cr_k: f64,
    pub full_risk: f64,
}

#[wasm_bindgen]
impl RccView {
    pub fn coverage(&self) -> Vec<f64> {
        self.coverage.clone()
    }

    pub fn risk(&self) -> Vec<f64> {
        self.risk.clone()
    }
}

pub fn rcc_view(confidences: &[f64], losses: &[f64], k: usize) -> Result<RccView, String> {
    if confidences.len() != losses.len() {
        return Err(format!(
            "{} confidences but {} losses",
            confidences.len(),
            losses.len()
        ));
    }
    let answers: Vec<AnsweredQuery> = confidences
        .iter()
        .zip(losses)
        .map(|(&c, &l)| AnsweredQuery::new(c, l))
        .collect();
    let (m, curve) = summarize(&answers, k.max(1)).map_err(|e| e.to_string())?;
    Ok(RccView {
        coverage: curve.points.iter().map(|p| p.coverage).collect(),
        risk: curve.points.iter().map(|p| p.risk).collect(),
        aurcc: m.aurcc,
        rpp: m.rpp,
        cr_k: m.cr_k,
        full_risk: m.loss_full_coverage,
    })
}

/// Synthetic answers with accuracy `accuracy` whose confidences are blended between a perfect
/// ordering (`quality = 1`), no information (`0`) and a reversed ordering (`-1`).
pub fn synthetic_answers(n: usize, accuracy: f64, quality: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut g = rng::seeded(seed);
    let q = quality.clamp(-1.0, 1.0);
    (0..n)
        .map(|_| {
            let correct = g.gen::<f64>() < accuracy;
            let informative = if correct { 1.0 } else { 0.0 };
            let noise: f64 = g.gen();
            let c = if q >= 0.0 {
                q * (0.5 * informative + 0.5 * noise) + (1.0 - q) * noise
            } else {
                -q * (0.5 * (1.0 - informative) + 0.5 * noise) + (1.0 + q) * noise
            };
            (c, if correct { 0.0 } else { 1.0 })
        })
        .unzip()
}

#[wasm_bindgen]
pub fn explore_rcc(
    n: usize,
    accuracy: f64,
    quality: f64,
    k: usize,
    seed: u64,
) -> Result<RccView, JsError> {
    let (c, l) = synthetic_answers(n, accuracy, quality, seed);
    rcc_view(&c, &l, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rcc_from_answers(confidences: &[f64], losses: &[f64], k: usize) -> Result<RccView, JsError> {
    rcc_view(confidences, losses, k).map_err(|e| JsError::new(&e))
}

/// Prediction `V < V_hat` and its confidence.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub prediction: bool,
    pub confidence: f64,
}

pub fn verdict(
    method: &str,
    values: &[f64],
    values_hat: &[f64],
    welch: bool,
) -> Result<Verdict, String> {
    if values.len() != values_hat.len() {
        return Err(format!(
            "{} values but {} hat values",
            values.len(),
            values_hat.len()
        ));
    }
    let method = Method::parse(method).map_err(|e| e.to_string())?;
    let pairs = ValuePairs::new(
        values
            .iter()
            .copied()
            .zip(values_hat.iter().copied())
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let df = if welch {
        UpciDf::Welch
    } else {
        UpciDf::MMinusOne
    };
    let a = answer(method, &pairs, df).map_err(|e| e.to_string())?;
    Ok(Verdict {
        prediction: a.prediction,
        confidence: a.confidence,
    })
}

#[wasm_bindgen]
pub fn compare(
    method: &str,
    values: &[f64],
    values_hat: &[f64],
    welch: bool,
) -> Result<Verdict, JsError> {
    verdict(method, values, values_hat, welch).map_err(|e| JsError::new(&e))
}

fn maze(layout: &str) -> Result<PointMaze, String> {
    PointMaze::by_layout(layout).ok_or_else(|| format!("unknown layout `{layout}`"))
}

/// Walls then the goal, four numbers `x0 y0 x1 y1` per rectangle.
pub fn layout_rects(layout: &str) -> Result<Vec<f64>, String> {
    let m = maze(layout)?;
    Ok(m.walls
        .iter()
        .chain(std::iter::once(&m.goal))
        .flat_map(|r| [r.x0, r.y0, r.x1, r.y1])
        .collect())
}

/// `x y` positions of one episode from the maze start, followed by the discounted return as the
/// final element.
pub fn rollout(
    layout: &str,
    gain: f64,
    noise: f64,
    steps: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let m = maze(layout)?;
    let policy = GoalSeekingController::new("demo", &m, gain, noise);
    let mut g = rng::seeded(seed);
    let mut s = EnvState(vec![m.start[0], m.start[1], 0.0, 0.0]);
    let mut out = vec![s.0[0], s.0[1]];
    let (mut ret, mut disc) = (0.0, 1.0);
    for t in 0..steps.min(m.max_steps) {
        if m.is_terminal(&s) {
            break;
        }
        let a = policy.act(&s, t, &mut g);
        let step = m.step(&s, &a, &mut g).map_err(|e| e.to_string())?;
        ret += disc * step.reward;
        disc *= gamma;
        s = step.next;
        out.extend([s.0[0], s.0[1]]);
    }
    out.push(ret);
    Ok(out)
}

#[wasm_bindgen]
pub fn maze_rects(layout: &str) -> Result<Vec<f64>, JsError> {
    layout_rects(layout).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn maze_rollout(
    layout: &str,
    gain: f64,
    noise: f64,
    steps: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    rollout(layout, gain, noise, steps, gamma, seed).map_err(|e| JsError::new(&e))
}
