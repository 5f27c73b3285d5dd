use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{loss_and_grad, soft_clamp_logvar, Loss, TrainSet, Workspace};
use super::{BaseModelConfig, DynamicsModel, ModelKind, RolloutMode};
use crate::data::{bootstrap_resample, compute_stats, Dataset, DatasetStats};
use crate::mdp::{EnvAction, EnvState};
use crate::nn::{Adam, Mlp};
use crate::{rng, Error, Result};

const INIT_STREAM: u64 = 1;
const PRIOR_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const BATCH_STREAM: u64 = 4;

/// A trainable network and its frozen prior (present when `prior_scale > 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub net: Mlp,
    pub prior: Option<Mlp>,
}

/// One learned model of `(s, a) -> (s_next, r)`.
///
/// Feed-forward kinds use a single head predicting every target at once. The autoregressive kind
/// has one head per target, in index order with the reward last, and head `j` also sees targets
/// `0..j`. Targets are `(s_next - s, r)`, standardized when `config.normalize` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub config: BaseModelConfig,
    pub stats: DatasetStats,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub heads: Vec<Head>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-split loss at initialization.
    pub initial_loss: f64,
    /// Training-split loss of the kept parameters.
    pub final_loss: f64,
    pub holdout_loss: f64,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
}

impl EnsembleMember {
    /// Fresh network (and prior) weights drawn from generators derived from `config.seed`.
    pub fn initialize(
        config: &BaseModelConfig,
        stats: DatasetStats,
        obs_dim: usize,
        act_dim: usize,
    ) -> Self {
        let mut init_rng = rng::stream(config.seed, INIT_STREAM);
        let mut prior_rng = rng::stream(config.seed, PRIOR_STREAM);
        let mut member = Self {
            config: config.clone(),
            stats,
            obs_dim,
            act_dim,
            heads: Vec::new(),
        };
        let n_heads = member.n_heads();
        for j in 0..n_heads {
            let sizes = member.head_sizes(j);
            let net = Mlp::new(&sizes, &mut init_rng);
            let prior = (config.prior_scale > 0.0).then(|| Mlp::new(&sizes, &mut prior_rng));
            member.heads.push(Head { net, prior });
        }
        member
    }

    pub fn n_targets(&self) -> usize {
        self.obs_dim + 1
    }

    fn n_heads(&self) -> usize {
        match self.config.kind {
            ModelKind::Autoregressive => self.n_targets(),
            _ => 1,
        }
    }

    fn head_targets(&self) -> usize {
        match self.config.kind {
            ModelKind::Autoregressive => 1,
            _ => self.n_targets(),
        }
    }

    fn head_input_dim(&self, j: usize) -> usize {
        self.obs_dim
            + self.act_dim
            + if self.config.kind == ModelKind::Autoregressive {
                j
            } else {
                0
            }
    }

    pub(crate) fn head_sizes(&self, j: usize) -> Vec<usize> {
        let mut sizes = vec![self.head_input_dim(j)];
        sizes.extend(&self.config.hidden_sizes);
        sizes.push(self.loss().net_outputs(self.head_targets()));
        sizes
    }

    pub fn loss(&self) -> Loss {
        if self.config.kind.is_gaussian() {
            Loss::GaussianNll {
                logvar_clamp: self.config.logvar_clamp,
            }
        } else {
            Loss::Mse
        }
    }

    pub fn n_params(&self) -> usize {
        self.heads.iter().map(|h| h.net.n_params()).sum()
    }

    fn encode_input(&self, s: &[f64], a: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.config.normalize {
            let st = &self.stats;
            out.extend(
                s.iter()
                    .zip(&st.obs_mean)
                    .zip(&st.obs_std)
                    .map(|((v, m), sd)| (v - m) / sd),
            );
            out.extend(
                a.iter()
                    .zip(&st.act_mean)
                    .zip(&st.act_std)
                    .map(|((v, m), sd)| (v - m) / sd),
            );
        } else {
            out.extend_from_slice(s);
            out.extend_from_slice(a);
        }
    }

    /// Target `k` (a state delta, or the reward for `k = obs_dim`) as seen by the network.
    fn encode_target(&self, k: usize, v: f64) -> f64 {
        if !self.config.normalize {
            return v;
        }
        let (m, sd) = self.target_moments(k);
        (v - m) / sd
    }

    fn decode_target(&self, k: usize, v: f64) -> f64 {
        if !self.config.normalize {
            return v;
        }
        let (m, sd) = self.target_moments(k);
        v * sd + m
    }

    fn target_moments(&self, k: usize) -> (f64, f64) {
        if k < self.obs_dim {
            (self.stats.delta_mean[k], self.stats.delta_std[k])
        } else {
            (self.stats.reward_mean, self.stats.reward_std)
        }
    }

    /// Per-head training sets, with prior offsets precomputed since priors and inputs are fixed.
    fn training_sets(&self, data: &Dataset) -> Vec<TrainSet> {
        let d = self.n_targets();
        let ht = self.head_targets();
        let mut sets: Vec<TrainSet> = (0..self.n_heads())
            .map(|j| TrainSet::new(self.head_input_dim(j), ht))
            .collect();
        let mut x = Vec::new();
        let mut y = vec![0.0; d];
        for t in &data.transitions {
            self.encode_input(&t.s.0, &t.a.0, &mut x);
            for k in 0..self.obs_dim {
                y[k] = self.encode_target(k, t.s_next.0[k] - t.s.0[k]);
            }
            y[self.obs_dim] = self.encode_target(self.obs_dim, t.r);
            if self.config.kind == ModelKind::Autoregressive {
                for (j, set) in sets.iter_mut().enumerate() {
                    let mut xj = x.clone();
                    xj.extend_from_slice(&y[..j]);
                    set.push(&xj, &y[j..=j]);
                }
            } else {
                sets[0].push(&x, &y);
            }
        }
        for (head, set) in self.heads.iter().zip(&mut sets) {
            if let Some(prior) = &head.prior {
                let scale = self.config.prior_scale;
                for i in 0..set.len() {
                    let out = prior.forward(&set.x[i * set.in_dim..(i + 1) * set.in_dim]);
                    set.offset.extend(out[..ht].iter().map(|v| scale * v));
                }
            }
        }
        sets
    }

    fn mean_loss(&self, sets: &[TrainSet], idx: &[usize], ws: &mut Workspace) -> f64 {
        let loss = self.loss();
        let total: f64 = self
            .heads
            .iter()
            .zip(sets)
            .map(|(h, set)| loss_and_grad(&h.net, loss, set, idx, None, ws))
            .sum();
        total / self.heads.len() as f64
    }

    fn sample_head(
        &self,
        head: &Head,
        x: &[f64],
        mode: RolloutMode,
        rng: &mut dyn RngCore,
        out: &mut Vec<f64>,
    ) {
        let ht = self.head_targets();
        let raw = head.net.forward(x);
        let prior = head.prior.as_ref().map(|p| p.forward(x));
        for k in 0..ht {
            let mut v = raw[k]
                + prior
                    .as_ref()
                    .map_or(0.0, |p| self.config.prior_scale * p[k]);
            if self.config.kind.is_gaussian() && mode == RolloutMode::Sample {
                let (lv, _) = soft_clamp_logvar(raw[ht + k], self.config.logvar_clamp);
                let z: f64 = StandardNormal.sample(rng);
                v += (0.5 * lv).exp() * z;
            }
            out.push(v);
        }
    }

    /// Predicted Gaussian standard deviations of the (unnormalized) targets at `(s, a)`, for
    /// feed-forward Gaussian members.
    pub fn predicted_std(&self, s: &EnvState, a: &EnvAction) -> Option<Vec<f64>> {
        if self.config.kind != ModelKind::GaussianFf {
            return None;
        }
        let mut x = Vec::new();
        self.encode_input(&s.0, &a.0, &mut x);
        let d = self.n_targets();
        let raw = self.heads[0].net.forward(&x);
        Some(
            (0..d)
                .map(|k| {
                    let (lv, _) = soft_clamp_logvar(raw[d + k], self.config.logvar_clamp);
                    let sd = (0.5 * lv).exp();
                    if self.config.normalize {
                        sd * self.target_moments(k).1
                    } else {
                        sd
                    }
                })
                .collect(),
        )
    }
}

impl DynamicsModel for EnsembleMember {
    fn predict(
        &self,
        s: &EnvState,
        a: &EnvAction,
        mode: RolloutMode,
        rng: &mut dyn RngCore,
    ) -> (EnvState, f64) {
        let mut x = Vec::with_capacity(self.obs_dim + self.act_dim + self.n_targets());
        self.encode_input(&s.0, &a.0, &mut x);
        let mut y = Vec::with_capacity(self.n_targets());
        if self.config.kind == ModelKind::Autoregressive {
            let base = x.len();
            for head in &self.heads {
                x.truncate(base);
                x.extend_from_slice(&y);
                self.sample_head(head, &x, mode, rng, &mut y);
            }
        } else {
            self.sample_head(&self.heads[0], &x, mode, rng, &mut y);
        }
        let st = &self.stats;
        let next = (0..self.obs_dim)
            .map(|k| (s.0[k] + self.decode_target(k, y[k])).clamp(st.obs_min[k], st.obs_max[k]))
            .collect();
        let r = self
            .decode_target(self.obs_dim, y[self.obs_dim])
            .clamp(st.reward_min, st.reward_max);
        (EnvState(next), r)
    }
}

pub fn train_member(dataset: &Dataset, config: &BaseModelConfig) -> Result<EnsembleMember> {
    train_member_with_report(dataset, config).map(|(m, _)| m)
}

/// Trains on `bootstrap_resample(dataset, config.seed)` with Adam minibatches. A
/// `holdout_fraction` share of the resample is held out; training stops after `patience` epochs
/// without holdout improvement and keeps the best parameters seen (the initialization included)
/// among those whose training loss does not exceed the initial one.
pub fn train_member_with_report(
    dataset: &Dataset,
    config: &BaseModelConfig,
) -> Result<(EnsembleMember, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    let stats = compute_stats(dataset);
    let mut member = EnsembleMember::initialize(config, stats, dataset.obs_dim, dataset.act_dim);
    let boot = bootstrap_resample(dataset, config.seed);
    let sets = member.training_sets(&boot);

    let n = boot.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(config.seed, SPLIT_STREAM));
    let n_holdout = (config.holdout_fraction * n as f64).floor() as usize;
    let holdout: Vec<usize> = order[..n_holdout].to_vec();
    let mut train: Vec<usize> = order[n_holdout..].to_vec();
    let mut batch_rng = rng::stream(config.seed, BATCH_STREAM);

    let mut ws = Workspace::default();
    let loss = member.loss();
    let train_eval = train_sorted(&holdout, n);
    let select = |m: &EnsembleMember, ws: &mut Workspace| -> (f64, f64) {
        let tr = m.mean_loss(&sets, &train_eval, ws);
        let ho = if holdout.is_empty() {
            tr
        } else {
            m.mean_loss(&sets, &holdout, ws)
        };
        (tr, ho)
    };
    let (initial_loss, initial_holdout) = select(&member, &mut ws);
    if !initial_loss.is_finite() {
        return Err(Error::TrainingDivergence {
            member: None,
            epoch: 0,
            loss: initial_loss,
        });
    }
    let mut best = (member.heads.clone(), initial_loss, initial_holdout, 0usize);
    let mut optimizers: Vec<Adam> = member
        .heads
        .iter()
        .map(|h| Adam::new(h.net.n_params(), config.learning_rate))
        .collect();
    let mut grads: Vec<Vec<f64>> = member
        .heads
        .iter()
        .map(|h| vec![0.0; h.net.n_params()])
        .collect();
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        train.shuffle(&mut batch_rng);
        for batch in train.chunks(config.batch_size) {
            for (((head, set), opt), grad) in member
                .heads
                .iter_mut()
                .zip(&sets)
                .zip(&mut optimizers)
                .zip(&mut grads)
            {
                loss_and_grad(&head.net, loss, set, batch, Some(grad), &mut ws);
                opt.step(&mut head.net.params, grad);
            }
        }
        epochs_run = epoch;
        let (tr, ho) = select(&member, &mut ws);
        if !tr.is_finite() || !ho.is_finite() {
            return Err(Error::TrainingDivergence {
                member: None,
                epoch,
                loss: if tr.is_finite() { ho } else { tr },
            });
        }
        if ho < best.2 && tr <= initial_loss {
            best = (member.heads.clone(), tr, ho, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (heads, final_loss, holdout_loss, best_epoch) = best;
    member.heads = heads;
    Ok((
        member,
        TrainReport {
            initial_loss,
            final_loss,
            holdout_loss,
            epochs_run,
            best_epoch,
        },
    ))
}

/// Complement of `holdout` in `0..n`, ascending.
fn train_sorted(holdout: &[usize], n: usize) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in holdout {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}
