//! Training objectives over a flat in-memory training set, with exact parameter gradients.

use crate::nn::{Mlp, Trace};

/// Regression targets with fixed inputs. `offset` holds per-sample additive terms for the
/// mean outputs (the scaled prior network), or is empty.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub in_dim: usize,
    pub out_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
}

impl TrainSet {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.x.len().checked_div(self.in_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
    }

    fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.in_dim..(i + 1) * self.in_dim]
    }

    fn target(&self, i: usize) -> &[f64] {
        &self.y[i * self.out_dim..(i + 1) * self.out_dim]
    }

    fn offset(&self, i: usize) -> Option<&[f64]> {
        (!self.offset.is_empty()).then(|| &self.offset[i * self.out_dim..(i + 1) * self.out_dim])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// Mean squared error; the network emits one output per target.
    Mse,
    /// Diagonal Gaussian negative log-likelihood (without the `ln 2pi` constant); the network
    /// emits target means followed by raw log-variances.
    GaussianNll { logvar_clamp: (f64, f64) },
}

impl Loss {
    pub fn net_outputs(&self, targets: usize) -> usize {
        match self {
            Loss::Mse => targets,
            Loss::GaussianNll { .. } => 2 * targets,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Smoothly bounds a raw log-variance: `u = hi - softplus(hi - raw)`, then
/// `lo + softplus(u - lo)`. The result lies in `(lo, hi + ln(1 + e^(lo - hi)))`. Returns the
/// bounded value and its derivative in `raw`.
pub fn soft_clamp_logvar(raw: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let upper = hi - softplus(hi - raw);
    let lv = lo + softplus(upper - lo);
    (lv, sigmoid(hi - raw) * sigmoid(upper - lo))
}

/// Reusable buffers for [`loss_and_grad`].
#[derive(Debug, Default)]
pub struct Workspace {
    trace: Trace,
    d_out: Vec<f64>,
    scratch: (Vec<f64>, Vec<f64>),
}

/// Mean loss over the samples in `idx` and all target dimensions. When `grad` is given it is
/// overwritten with the gradient of that mean.
pub fn loss_and_grad(
    net: &Mlp,
    loss: Loss,
    set: &TrainSet,
    idx: &[usize],
    mut grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> f64 {
    let d = set.out_dim;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    if idx.is_empty() {
        return 0.0;
    }
    let scale = 1.0 / (idx.len() * d) as f64;
    let mut total = 0.0;
    for &i in idx {
        net.forward_traced(set.input(i), &mut ws.trace);
        let out = ws.trace.output();
        let y = set.target(i);
        let off = set.offset(i);
        ws.d_out.clear();
        ws.d_out.resize(out.len(), 0.0);
        for k in 0..d {
            let mean = out[k] + off.map_or(0.0, |o| o[k]);
            let err = mean - y[k];
            match loss {
                Loss::Mse => {
                    total += err * err;
                    ws.d_out[k] = 2.0 * err * scale;
                }
                Loss::GaussianNll { logvar_clamp } => {
                    let (lv, dlv) = soft_clamp_logvar(out[d + k], logvar_clamp);
                    let inv_var = (-lv).exp();
                    total += 0.5 * (err * err * inv_var + lv);
                    ws.d_out[k] = err * inv_var * scale;
                    ws.d_out[d + k] = 0.5 * (1.0 - err * err * inv_var) * dlv * scale;
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            net.backward(&ws.trace, &ws.d_out, g, &mut ws.scratch);
        }
    }
    total * scale
}
