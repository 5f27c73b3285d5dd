//! A small fully connected network with hand-written backpropagation, stored as one flat
//! parameter vector so optimizers and checkpoints treat it as plain data.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

/// Swish, `z * sigmoid(z)`, on hidden layers; the output layer is linear.
#[inline]
fn swish(z: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-z).exp());
    let h = z * s;
    (h, s + h * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Activation derivatives of hidden layers.
    slopes: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

impl Mlp {
    /// Weights drawn from `N(0, 1 / fan_in)`, biases zero.
    pub fn new(sizes: &[usize], rng: &mut dyn RngCore) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                params.push(scale * z);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::count(sizes)).then(|| Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Forward pass recording activations into `trace` (buffers are reused across calls).
    pub fn forward_traced(&self, input: &[f64], trace: &mut Trace) {
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        trace.acts.resize_with(n_layers + 1, Vec::new);
        trace.slopes.resize_with(n_layers, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases =
                &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let out = &mut rest[0];
            out.clear();
            let slopes = &mut trace.slopes[l];
            slopes.clear();
            let hidden = l + 1 < n_layers;
            for (row, &b) in weights.chunks_exact(fan_in).zip(biases) {
                let z = row.iter().zip(x).fold(b, |acc, (w, v)| acc + w * v);
                if hidden {
                    let (h, d) = swish(z);
                    out.push(h);
                    slopes.push(d);
                } else {
                    out.push(z);
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_traced(input, &mut trace);
        trace.acts.pop().unwrap_or_default()
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output` for the pass recorded
    /// in `trace`. `scratch` holds the running error signal.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: &[f64],
        grad: &mut [f64],
        scratch: &mut (Vec<f64>, Vec<f64>),
    ) {
        let n_layers = self.sizes.len() - 1;
        let (delta, next_delta) = scratch;
        delta.clear();
        delta.extend_from_slice(d_out);
        let mut end = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = end - fan_in * fan_out - fan_out;
            let x = &trace.acts[l];
            {
                let (gw, gb) = grad[start..end].split_at_mut(fan_in * fan_out);
                for ((row, g_b), &d) in gw
                    .chunks_exact_mut(fan_in)
                    .zip(gb.iter_mut())
                    .zip(delta.iter())
                {
                    *g_b += d;
                    for (g, v) in row.iter_mut().zip(x) {
                        *g += d * v;
                    }
                }
            }
            if l > 0 {
                let weights = &self.params[start..start + fan_in * fan_out];
                next_delta.clear();
                next_delta.resize(fan_in, 0.0);
                for (row, &d) in weights.chunks_exact(fan_in).zip(delta.iter()) {
                    for (nd, w) in next_delta.iter_mut().zip(row) {
                        *nd += d * w;
                    }
                }
                for (nd, s) in next_delta.iter_mut().zip(&trace.slopes[l - 1]) {
                    *nd *= s;
                }
                std::mem::swap(delta, next_delta);
            }
            end = start;
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn half_sq_loss(net: &Mlp, x: &[f64], y: &[f64]) -> f64 {
        net.forward(x)
            .iter()
            .zip(y)
            .map(|(o, t)| 0.5 * (o - t).powi(2))
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng::seeded(3);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -1.2, 0.8];
        let y = [0.5, -0.25];
        let mut trace = Trace::default();
        net.forward_traced(&x, &mut trace);
        let d_out: Vec<f64> = trace.output().iter().zip(&y).map(|(o, t)| o - t).collect();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&trace, &d_out, &mut grad, &mut Default::default());
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (half_sq_loss(&plus, &x, &y) - half_sq_loss(&minus, &x, &y)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-7,
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn from_params_checks_length() {
        assert!(Mlp::from_params(&[2, 3, 1], vec![0.0; 13]).is_some());
        assert!(Mlp::from_params(&[2, 3, 1], vec![0.0; 12]).is_none());
    }
}
