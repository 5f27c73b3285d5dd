use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use opcc::confidence::{estimate_value_pairs, Comparison};
use opcc::data::{collect_named_dataset, compute_stats, Dataset, Transition};
use opcc::dynamics::{
    rollout_value, train_ensemble, train_member, BaseModelConfig, DynamicsModel, Ensemble,
    EnsembleMember, ModelKind, RolloutMode, TabularModel, Termination,
};
use opcc::envs::{EnvSpec, GoalSeekingController};
use opcc::mdp::{policy_value_dp, EnvAction, EnvState, Environment, SharedPolicy, ValueQuerySpec};
use opcc::querygen::policy_family;
use opcc::rng;

/// `s' = s + 0.5 a (+ noise)` with `r = 0`, states in `[-s_range, s_range]^2` and actions in
/// `[-a_range, a_range]^2`.
fn linear_data(n: usize, s_range: f64, a_range: f64, noise: f64, seed: u64) -> Dataset {
    let mut g = rng::seeded(seed);
    let eps = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let transitions = (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..2).map(|_| g.gen_range(-s_range..s_range)).collect();
            let a: Vec<f64> = (0..2).map(|_| g.gen_range(-a_range..a_range)).collect();
            let next = (0..2)
                .map(|k| s[k] + 0.5 * a[k] + if noise > 0.0 { eps.sample(&mut g) } else { 0.0 })
                .collect();
            Transition {
                s: EnvState(s),
                a: EnvAction(a),
                s_next: EnvState(next),
                r: 0.0,
                terminal: false,
            }
        })
        .collect();
    Dataset::new(transitions, 2, 2, "linear", "linear", seed).unwrap()
}

fn config(kind: ModelKind, seed: u64) -> BaseModelConfig {
    BaseModelConfig {
        kind,
        hidden_sizes: vec![32, 32],
        epochs: 300,
        patience: 20,
        learning_rate: 3e-3,
        seed,
        ..Default::default()
    }
}

#[test]
fn deterministic_model_fits_a_linear_system() {
    let data = linear_data(2000, 1.0, 1.0, 0.0, 1);
    let member = train_member(&data, &config(ModelKind::DeterministicFf, 2)).unwrap();
    let mut g = rng::seeded(99);
    let mut sq = 0.0;
    let n = 500;
    for _ in 0..n {
        let s: Vec<f64> = (0..2).map(|_| g.gen_range(-0.9..0.9)).collect();
        let a: Vec<f64> = (0..2).map(|_| g.gen_range(-0.9..0.9)).collect();
        let (next, _) = member.predict(
            &EnvState(s.clone()),
            &EnvAction(a.clone()),
            RolloutMode::Mean,
            &mut g,
        );
        for k in 0..2 {
            sq += (next.0[k] - (s[k] + 0.5 * a[k])).powi(2);
        }
    }
    let rms = (sq / (2 * n) as f64).sqrt();
    assert!(rms <= 1e-2, "held-out RMS {rms}");
}

#[test]
fn gaussian_model_recovers_noise_scale() {
    let data = linear_data(3000, 1.0, 1.0, 0.1, 3);
    let member = train_member(&data, &config(ModelKind::GaussianFf, 4)).unwrap();
    let mut g = rng::seeded(5);
    for _ in 0..50 {
        let s = EnvState((0..2).map(|_| g.gen_range(-0.8..0.8)).collect());
        let a = EnvAction((0..2).map(|_| g.gen_range(-0.8..0.8)).collect());
        let sd = member.predicted_std(&s, &a).unwrap();
        for &v in &sd[..2] {
            assert!((0.05..=0.2).contains(&v), "sigma {v} at {s:?}");
        }
    }
}

fn disagreement(ens: &Ensemble, points: &[(EnvState, EnvAction)]) -> f64 {
    let mut g = rng::seeded(0);
    let mut total = 0.0;
    for (s, a) in points {
        let preds: Vec<EnvState> = ens
            .members
            .iter()
            .map(|m| m.predict(s, a, RolloutMode::Mean, &mut g).0)
            .collect();
        for k in 0..s.0.len() {
            let mean = preds.iter().map(|p| p.0[k]).sum::<f64>() / preds.len() as f64;
            let var = preds.iter().map(|p| (p.0[k] - mean).powi(2)).sum::<f64>()
                / (preds.len() - 1) as f64;
            total += var.sqrt();
        }
    }
    total / points.len() as f64
}

#[test]
fn priors_raise_disagreement_away_from_the_data() {
    // Wide state range and narrow actions, so far-away actions do not saturate the clip bounds.
    let mut wins = 0;
    for seed in 0..5 {
        let data = linear_data(500, 10.0, 0.1, 0.0, seed);
        let mut g = rng::seeded(seed + 100);
        let far: Vec<(EnvState, EnvAction)> = (0..50)
            .map(|_| {
                let s = EnvState((0..2).map(|_| g.gen_range(-2.0..2.0)).collect());
                let a = EnvAction((0..2).map(|_| if g.gen() { 4.0 } else { -4.0 }).collect());
                (s, a)
            })
            .collect();
        let train = |prior_scale: f64| {
            let cfg = BaseModelConfig {
                prior_scale,
                epochs: 40,
                ..config(ModelKind::DeterministicFf, seed * 10)
            };
            train_ensemble(&data, &cfg, 5, Termination::Never, 1).unwrap()
        };
        if disagreement(&train(5.0), &far) > disagreement(&train(0.0), &far) {
            wins += 1;
        }
    }
    assert!(wins >= 4, "priors disagreed more in only {wins}/5 seeds");
}

#[test]
fn first_members_do_not_depend_on_ensemble_size() {
    let data = linear_data(200, 1.0, 1.0, 0.05, 8);
    let cfg = BaseModelConfig {
        epochs: 5,
        prior_scale: 1.0,
        ..config(ModelKind::GaussianFf, 40)
    };
    let big = train_ensemble(&data, &cfg, 4, Termination::Never, 2).unwrap();
    let small = train_ensemble(&data, &cfg, 2, Termination::Never, 1).unwrap();
    assert_eq!(big.members[..2], small.members[..]);
}

fn chain_setup() -> (EnvSpec, TabularModel) {
    let env = EnvSpec::by_name("chain").unwrap();
    let mut g = rng::seeded(21);
    let mut transitions = Vec::new();
    for s in 0..10 {
        for a in 0..2 {
            for _ in 0..2000 {
                let state = EnvState(vec![s as f64]);
                let action = EnvAction(vec![a as f64]);
                let out = env.step(&state, &action, &mut g).unwrap();
                transitions.push(Transition {
                    s: state,
                    a: action,
                    s_next: out.next,
                    r: out.reward,
                    terminal: out.terminal,
                });
            }
        }
    }
    let data = Dataset::new(transitions, 1, 1, "grid", "chain", 21).unwrap();
    let model = TabularModel::fit(&data, 10, 2).unwrap();
    (env, model)
}

#[test]
fn tabular_rollouts_track_exact_values() {
    let (env, model) = chain_setup();
    let family = policy_family(&env, 4).unwrap();
    let mut g = rng::seeded(3);
    for p in [&family.policies[0], &family.policies[3]] {
        for s in [0usize, 4, 7, 9] {
            for h in [1, 5, 10] {
                let s0 = EnvState(vec![s as f64]);
                let exact = policy_value_dp(
                    &env,
                    &ValueQuerySpec::new(s0.clone(), p.clone(), h, 0.99).unwrap(),
                )
                .unwrap();
                let n = 4000;
                let est = (0..n)
                    .map(|_| {
                        rollout_value(
                            &model,
                            p.as_ref(),
                            &s0,
                            h,
                            0.99,
                            RolloutMode::Sample,
                            &Termination::Never,
                            &mut g,
                        )
                    })
                    .sum::<f64>()
                    / n as f64;
                assert!(
                    (est - exact).abs() <= 0.1,
                    "{} s={s} h={h}: {est} vs {exact}",
                    p.id()
                );
            }
        }
    }
}

#[test]
fn tabular_pairs_order_like_exact_values() {
    let (env, model) = chain_setup();
    let family = policy_family(&env, 4).unwrap();
    let members = vec![model.clone(), model.clone(), model];
    let mut checked = 0;
    for (a, b) in [(0, 3), (1, 2), (3, 0), (2, 1)] {
        for (s, s_hat) in [(3usize, 3usize), (5, 2), (1, 6)] {
            let (s, s_hat) = (EnvState(vec![s as f64]), EnvState(vec![s_hat as f64]));
            let value = |p: &SharedPolicy, x: &EnvState| {
                policy_value_dp(
                    &env,
                    &ValueQuerySpec::new(x.clone(), p.clone(), 10, 0.99).unwrap(),
                )
                .unwrap()
            };
            let (va, vb) = (
                value(&family.policies[a], &s),
                value(&family.policies[b], &s_hat),
            );
            if (va - vb).abs() < 0.5 {
                continue;
            }
            let q = Comparison {
                s: &s,
                policy: family.policies[a].as_ref(),
                s_hat: &s_hat,
                policy_hat: family.policies[b].as_ref(),
                horizon: 10,
            };
            let pairs = estimate_value_pairs(
                &members,
                &Termination::Never,
                &q,
                0.99,
                2000,
                RolloutMode::Sample,
                7,
            )
            .unwrap();
            for &(x, y) in &pairs.pairs {
                assert_eq!(
                    x < y,
                    va < vb,
                    "policies {a} vs {b}: model ({x}, {y}), exact ({va}, {vb})"
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 6);
}

#[test]
fn mean_mode_with_a_deterministic_policy_needs_one_rollout() {
    let env = EnvSpec::by_name("maze-open").unwrap();
    let EnvSpec::PointMaze(maze) = &env else {
        unreachable!()
    };
    let data = collect_named_dataset(&env, "mixed", 600, 2).unwrap();
    let cfg = BaseModelConfig {
        hidden_sizes: vec![16, 16],
        epochs: 5,
        ..config(ModelKind::DeterministicFf, 6)
    };
    let ens = train_ensemble(&data, &cfg, 3, Termination::Never, 1).unwrap();
    let fast: SharedPolicy = Arc::new(GoalSeekingController::new("fast", maze, 2.0, 0.0));
    let slow: SharedPolicy = Arc::new(GoalSeekingController::new("slow", maze, 0.5, 0.0));
    let s = data.transitions[10].s.clone();
    let s_hat = data.transitions[300].s.clone();
    let q = Comparison {
        s: &s,
        policy: fast.as_ref(),
        s_hat: &s_hat,
        policy_hat: slow.as_ref(),
        horizon: 20,
    };
    let one = estimate_value_pairs(
        &ens.members,
        &ens.termination,
        &q,
        0.99,
        1,
        RolloutMode::Mean,
        3,
    )
    .unwrap();
    let five = estimate_value_pairs(
        &ens.members,
        &ens.termination,
        &q,
        0.99,
        5,
        RolloutMode::Mean,
        11,
    )
    .unwrap();
    for (p1, p5) in one.pairs.iter().zip(&five.pairs) {
        assert!((p1.0 - p5.0).abs() <= 1e-12 * p1.0.abs().max(1.0));
        assert!((p1.1 - p5.1).abs() <= 1e-12 * p1.1.abs().max(1.0));
    }
}

fn maze_member() -> &'static (EnsembleMember, opcc::data::DatasetStats) {
    static MEMBER: OnceLock<(EnsembleMember, opcc::data::DatasetStats)> = OnceLock::new();
    MEMBER.get_or_init(|| {
        let env = EnvSpec::by_name("maze-umaze").unwrap();
        let data = collect_named_dataset(&env, "mixed", 800, 5).unwrap();
        let cfg = BaseModelConfig {
            hidden_sizes: vec![16, 16],
            epochs: 5,
            prior_scale: 3.0,
            ..config(ModelKind::Autoregressive, 9)
        };
        (train_member(&data, &cfg).unwrap(), compute_stats(&data))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rollouts_stay_inside_dataset_bounds(seed in any::<u64>(), x in -20.0f64..20.0, y in -20.0f64..20.0,
                                           sample in any::<bool>()) {
        let (member, st) = maze_member();
        let mode = if sample { RolloutMode::Sample } else { RolloutMode::Mean };
        let mut g = rng::seeded(seed);
        let mut s = EnvState(vec![x, y, 0.0, 0.0]);
        for _ in 0..30 {
            let a = EnvAction(vec![g.gen_range(-5.0..5.0), g.gen_range(-5.0..5.0)]);
            let (next, r) = member.predict(&s, &a, mode, &mut g);
            for k in 0..4 {
                prop_assert!(st.obs_min[k] <= next.0[k] && next.0[k] <= st.obs_max[k]);
            }
            prop_assert!(st.reward_min <= r && r <= st.reward_max);
            s = next;
        }
    }
}
