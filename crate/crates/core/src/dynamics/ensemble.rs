use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::member::{train_member, EnsembleMember, Head};
use super::{BaseModelConfig, ModelKind, Termination};
use crate::data::{Dataset, DatasetStats, Header};
use crate::nn::Mlp;
use crate::{par, Error, Result};

const MAGIC: &str = "opcc-ensemble";
const VERSION: u32 = 1;

/// `M` independently trained members sharing one termination rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
    pub termination: Termination,
    /// Name of the training dataset.
    pub dataset: String,
}

/// Member `i` is trained with `seed = config.seed + i`, which selects its bootstrap resample,
/// initialization, prior and minibatch order. Members are trained on up to `jobs` threads; the
/// result does not depend on `jobs`.
pub fn train_ensemble(
    dataset: &Dataset,
    config: &BaseModelConfig,
    m: usize,
    termination: Termination,
    jobs: usize,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "an ensemble needs at least one member".into(),
        ));
    }
    let configs: Vec<BaseModelConfig> = (0..m as u64)
        .map(|i| BaseModelConfig {
            seed: config.seed.wrapping_add(i),
            ..config.clone()
        })
        .collect();
    let members = par::map_ordered(&configs, jobs, |i, cfg| {
        train_member(dataset, cfg).map_err(|e| match e {
            Error::TrainingDivergence { epoch, loss, .. } => Error::TrainingDivergence {
                member: Some(i),
                epoch,
                loss,
            },
            other => other,
        })
    })?;
    Ok(Ensemble {
        members,
        termination,
        dataset: dataset.name.clone(),
    })
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Text checkpoint: a header echoing the shared configuration, the dataset statistics, then
    /// per member its seed and the flat trainable and prior parameters of each head.
    pub fn to_text(&self) -> Result<String> {
        let first = self
            .members
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot save an empty ensemble".into()))?;
        let c = &first.config;
        let hidden: Vec<String> = c.hidden_sizes.iter().map(usize::to_string).collect();
        let mut out = format!(
            "{MAGIC} version={VERSION} members={} dataset={} obs_dim={} act_dim={} termination={} kind={} hidden={} \
             normalize={} prior_scale={:?} logvar_lo={:?} logvar_hi={:?} epochs={} batch_size={} \
             learning_rate={:?} holdout_fraction={:?} patience={}\n",
            self.len(),
            self.dataset,
            first.obs_dim,
            first.act_dim,
            self.termination.to_text(),
            c.kind.name(),
            hidden.join(","),
            c.normalize,
            c.prior_scale,
            c.logvar_clamp.0,
            c.logvar_clamp.1,
            c.epochs,
            c.batch_size,
            c.learning_rate,
            c.holdout_fraction,
            c.patience,
        );
        let st = &first.stats;
        write_row(&mut out, "stats obs_min", &st.obs_min);
        write_row(&mut out, "stats obs_max", &st.obs_max);
        write_row(
            &mut out,
            "stats reward_range",
            &[st.reward_min, st.reward_max],
        );
        write_row(&mut out, "stats obs_mean", &st.obs_mean);
        write_row(&mut out, "stats obs_std", &st.obs_std);
        write_row(&mut out, "stats act_mean", &st.act_mean);
        write_row(&mut out, "stats act_std", &st.act_std);
        write_row(&mut out, "stats delta_mean", &st.delta_mean);
        write_row(&mut out, "stats delta_std", &st.delta_std);
        write_row(
            &mut out,
            "stats reward_moments",
            &[st.reward_mean, st.reward_std],
        );
        for (i, m) in self.members.iter().enumerate() {
            writeln!(out, "member {i} seed={}", m.config.seed).unwrap();
            for (j, h) in m.heads.iter().enumerate() {
                write_row(&mut out, &format!("head {j} net"), &h.net.params);
                if let Some(p) = &h.prior {
                    write_row(&mut out, &format!("head {j} prior"), &p.params);
                }
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty checkpoint"))?;
        let h = Header::parse(header, MAGIC, origin)?;
        let version: u32 = h.get("version")?;
        if version != VERSION {
            return Err(Error::parse(
                origin,
                1,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let n_members: usize = h.get("members")?;
        let dataset = h.raw("dataset")?.to_string();
        let obs_dim: usize = h.get("obs_dim")?;
        let act_dim: usize = h.get("act_dim")?;
        let termination = Termination::from_text(h.raw("termination")?)
            .ok_or_else(|| Error::parse(origin, 1, "bad termination field"))?;
        let hidden_sizes = h
            .raw("hidden")?
            .split(',')
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|e| Error::parse(origin, 1, format!("hidden: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let base = BaseModelConfig {
            kind: ModelKind::parse(h.raw("kind")?)?,
            hidden_sizes,
            normalize: h.get("normalize")?,
            prior_scale: h.get("prior_scale")?,
            logvar_clamp: (h.get("logvar_lo")?, h.get("logvar_hi")?),
            epochs: h.get("epochs")?,
            batch_size: h.get("batch_size")?,
            learning_rate: h.get("learning_rate")?,
            seed: 0,
            holdout_fraction: h.get("holdout_fraction")?,
            patience: h.get("patience")?,
        };
        base.validate()?;

        let mut row = |tag: &str| -> Result<Vec<f64>> {
            let (i, line) = lines.next().ok_or_else(|| {
                Error::parse(origin, 0, format!("checkpoint ends before `{tag}`"))
            })?;
            let rest = line
                .strip_prefix(tag)
                .ok_or_else(|| Error::parse(origin, i + 1, format!("expected `{tag}`")))?;
            rest.split_ascii_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::parse(origin, i + 1, e.to_string()))
                })
                .collect()
        };
        let sized = |v: Vec<f64>, n: usize, what: &'static str| -> Result<Vec<f64>> {
            if v.len() == n {
                Ok(v)
            } else {
                Err(Error::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                })
            }
        };
        let obs_min = sized(row("stats obs_min")?, obs_dim, "obs_min")?;
        let obs_max = sized(row("stats obs_max")?, obs_dim, "obs_max")?;
        let rr = sized(row("stats reward_range")?, 2, "reward_range")?;
        let obs_mean = sized(row("stats obs_mean")?, obs_dim, "obs_mean")?;
        let obs_std = sized(row("stats obs_std")?, obs_dim, "obs_std")?;
        let act_mean = sized(row("stats act_mean")?, act_dim, "act_mean")?;
        let act_std = sized(row("stats act_std")?, act_dim, "act_std")?;
        let delta_mean = sized(row("stats delta_mean")?, obs_dim, "delta_mean")?;
        let delta_std = sized(row("stats delta_std")?, obs_dim, "delta_std")?;
        let rm = sized(row("stats reward_moments")?, 2, "reward_moments")?;
        let stats = DatasetStats {
            obs_min,
            obs_max,
            reward_min: rr[0],
            reward_max: rr[1],
            obs_mean,
            obs_std,
            act_mean,
            act_std,
            delta_mean,
            delta_std,
            reward_mean: rm[0],
            reward_std: rm[1],
        };

        let mut members = Vec::with_capacity(n_members);
        for i in 0..n_members {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(origin, 0, format!("missing member {i}")))?;
            let seed: u64 = line
                .strip_prefix(&format!("member {i} seed="))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| {
                    Error::parse(origin, ln + 1, format!("expected `member {i} seed=...`"))
                })?;
            let config = BaseModelConfig {
                seed,
                ..base.clone()
            };
            let mut member = EnsembleMember {
                config,
                stats: stats.clone(),
                obs_dim,
                act_dim,
                heads: Vec::new(),
            };
            let n_heads = if base.kind == ModelKind::Autoregressive {
                obs_dim + 1
            } else {
                1
            };
            for j in 0..n_heads {
                let sizes = member.head_sizes(j);
                let parse_net = |(ln, line): (usize, &str), tag: &str| -> Result<Mlp> {
                    let vals = line
                        .strip_prefix(tag)
                        .ok_or_else(|| Error::parse(origin, ln + 1, format!("expected `{tag}`")))?
                        .split_ascii_whitespace()
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|e| Error::parse(origin, ln + 1, e.to_string()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Mlp::from_params(&sizes, vals).ok_or_else(|| {
                        Error::parse(
                            origin,
                            ln + 1,
                            "parameter count does not match the architecture",
                        )
                    })
                };
                let net_tag = format!("head {j} net");
                let next = lines
                    .next()
                    .ok_or_else(|| Error::parse(origin, 0, format!("missing `{net_tag}`")))?;
                let net = parse_net(next, &net_tag)?;
                let prior_tag = format!("head {j} prior");
                let prior = match lines.peek() {
                    Some((_, l)) if l.starts_with(&prior_tag) => {
                        Some(parse_net(lines.next().unwrap(), &prior_tag)?)
                    }
                    _ => None,
                };
                if prior.is_some() != (base.prior_scale > 0.0) {
                    return Err(Error::parse(
                        origin,
                        ln + 1,
                        "prior networks must be present exactly when prior_scale > 0",
                    ));
                }
                member.heads.push(Head { net, prior });
            }
            members.push(member);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(
                origin,
                ln + 1,
                "trailing content after the last member",
            ));
        }
        Ok(Ensemble {
            members,
            termination,
            dataset,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_text(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

fn write_row(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
}
