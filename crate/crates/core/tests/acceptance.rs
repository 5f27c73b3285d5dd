//! Acceptance criteria. Runs as a plain binary (`harness = false`) so every criterion prints a
//! PASS or FAIL line; the process fails if any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use opcc::confidence::{confidence_ev, confidence_pci, confidence_upci, Method, ValuePairs};
use opcc::dynamics::loss::{loss_and_grad, Loss, TrainSet, Workspace};
use opcc::envs::EnvSpec;
use opcc::harness::sweep::{metrics_csv, write_results};
use opcc::harness::{run_sweep, ExperimentConfig, MetricsRow, SweepResult};
use opcc::mdp::{policy_value_dp, policy_value_mc, EnvState, ValueQuerySpec};
use opcc::metrics::{
    aurcc, build_rcc, coverage, coverage_resolution, rpp, selective_risk, AnsweredQuery,
    RiskCoverageCurve,
};
use opcc::nn::Mlp;
use opcc::querygen::policy_family;
use opcc::rng;
use opcc::special::t_cdf;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

// ---------------------------------------------------------------------------------------------
// Brute-force metric references.

fn bf_coverage(a: &[AnsweredQuery], tau: f64) -> f64 {
    let mut covered = 0.0;
    for q in a {
        if q.confidence >= tau {
            covered += 1.0;
        }
    }
    covered / a.len() as f64
}

fn bf_risk(a: &[AnsweredQuery], tau: f64) -> Option<f64> {
    let covered: Vec<f64> = a
        .iter()
        .filter(|q| q.confidence >= tau)
        .map(|q| q.loss)
        .collect();
    (!covered.is_empty()).then(|| covered.iter().sum::<f64>() / covered.len() as f64)
}

/// Operating points from explicit threshold enumeration: every distinct confidence plus a
/// sentinel above the maximum, as `(coverage count, risk)`.
fn bf_points(a: &[AnsweredQuery]) -> Vec<(usize, f64)> {
    let mut taus: Vec<f64> = a.iter().map(|q| q.confidence).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut pts = vec![(0usize, 0.0)];
    for &tau in &taus {
        let count = a.iter().filter(|q| q.confidence >= tau).count();
        pts.push((count, bf_risk(a, tau).unwrap()));
    }
    pts.sort_by_key(|p| p.0);
    pts
}

/// Integrates the interpolated curve cell by cell on the grid `k / n`, which contains every
/// breakpoint, evaluating the interpolant at both cell ends.
fn bf_aurcc(a: &[AnsweredQuery]) -> f64 {
    let n = a.len();
    let pts = bf_points(a);
    let value_at = |k: usize| -> f64 {
        let j = pts.iter().position(|p| p.0 >= k).unwrap();
        if pts[j].0 == k {
            return pts[j].1;
        }
        let (k0, r0) = pts[j - 1];
        let (k1, r1) = pts[j];
        r0 + (r1 - r0) * (k - k0) as f64 / (k1 - k0) as f64
    };
    (0..n)
        .map(|k| 0.5 * (value_at(k) + value_at(k + 1)) / n as f64)
        .sum()
}

fn bf_rpp(a: &[AnsweredQuery]) -> f64 {
    let mut count = 0usize;
    for q1 in a {
        for q2 in a {
            if q1.loss < q2.loss && q1.confidence < q2.confidence {
                count += 1;
            }
        }
    }
    count as f64 / (a.len() * a.len()) as f64
}

fn bf_cr(a: &[AnsweredQuery], k: usize) -> f64 {
    let n = a.len();
    let mut hit = vec![false; k];
    for (count, _) in bf_points(a) {
        for (i, h) in hit.iter_mut().enumerate() {
            // bin i covers [i/k, (i+1)/k), the last one also its right end
            let inside =
                i * n <= count * k && (count * k < (i + 1) * n || (i == k - 1 && count == n));
            if inside {
                *h = true;
            }
        }
    }
    hit.iter().filter(|&&h| h).count() as f64 / k as f64
}

fn random_instance(g: &mut impl Rng) -> Vec<AnsweredQuery> {
    let n = g.gen_range(1..=50);
    let levels = g.gen_range(1..=12);
    let tied = g.gen_bool(0.5);
    (0..n)
        .map(|_| {
            let c = if tied {
                g.gen_range(0..levels) as f64 / levels as f64
            } else {
                g.gen::<f64>()
            };
            AnsweredQuery::new(c, if g.gen_bool(0.4) { 1.0 } else { 0.0 })
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut g = rng::seeded(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a = random_instance(&mut g);
        let curve = build_rcc(&a).unwrap();
        let mut err = (aurcc(&curve) - bf_aurcc(&a)).abs();
        err = err.max((rpp(&a).unwrap() - bf_rpp(&a)).abs());
        for k in [1, 3, 10, 17] {
            err = err.max((coverage_resolution(&a, k).unwrap() - bf_cr(&a, k)).abs());
        }
        let mut taus: Vec<f64> = a.iter().map(|q| q.confidence).collect();
        taus.extend([0.0, -1.0, 2.0, 0.33, 0.5]);
        for tau in taus {
            err = err.max((coverage(&a, tau).unwrap() - bf_coverage(&a, tau)).abs());
            match (selective_risk(&a, tau), bf_risk(&a, tau)) {
                (Ok(r), Some(b)) => err = err.max((r - b).abs()),
                (Err(_), None) => {}
                _ => err = f64::INFINITY,
            }
        }
        worst = worst.max(err);
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("max abs error {worst:.2e} over 200 instances in {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let n = 2000;
    let r_f = 0.3;
    let losses: Vec<f64> = (0..n).map(|i| if i < 600 { 1.0 } else { 0.0 }).collect();
    let mut g = rng::seeded(2);
    let mean = (0..20)
        .map(|_| {
            let a: Vec<AnsweredQuery> = losses
                .iter()
                .map(|&l| AnsweredQuery::new(g.gen(), l))
                .collect();
            aurcc(&build_rcc(&a).unwrap())
        })
        .sum::<f64>()
        / 20.0;
    outcome(
        (mean - r_f).abs() <= 0.02,
        format!("mean AURCC {mean:.4} vs r_f {r_f}"),
    )
}

fn criterion_3() -> Outcome {
    let n = 2000;
    let p: f64 = 0.5;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(3));
    // Ranks: correct answers get the top n p confidences.
    let a: Vec<AnsweredQuery> = order
        .iter()
        .enumerate()
        .map(|(rank, _)| {
            let correct = (rank as f64) < p * n as f64;
            let c = 1.0 - rank as f64 / n as f64;
            AnsweredQuery::new(c, if correct { 0.0 } else { 1.0 })
        })
        .collect();
    let value = aurcc(&build_rcc(&a).unwrap());
    let expected = (1.0 - p) + p * p.ln();
    outcome(
        (value - expected).abs() <= 0.01,
        format!("AURCC {value:.4} vs {expected:.4}"),
    )
}

fn endpoints_ok(curve: &RiskCoverageCurve, a: &[AnsweredQuery]) -> bool {
    let r_f = a.iter().map(|q| q.loss).sum::<f64>() / a.len() as f64;
    let first = curve.points.first().unwrap();
    let last = curve.points.last().unwrap();
    first.coverage == 0.0 && first.risk == 0.0 && last.coverage == 1.0 && last.risk == r_f
}

fn criterion_4(extra: &[RiskCoverageCurve]) -> Outcome {
    let mut g = rng::seeded(4);
    let mut checked = 0;
    let mut bad = 0;
    for _ in 0..500 {
        let a = random_instance(&mut g);
        checked += 1;
        if !endpoints_ok(&build_rcc(&a).unwrap(), &a) {
            bad += 1;
        }
    }
    for curve in extra {
        checked += 1;
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        if !(first.coverage == 0.0 && first.risk == 0.0 && last.coverage == 1.0) {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("{checked} curves, {bad} with wrong endpoints"),
    )
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let env = EnvSpec::by_name("chain").unwrap();
    let family = policy_family(&env, 4).unwrap();
    let mut g = rng::seeded(5);
    let mut ok = 0;
    let mut strict = 0;
    let trials = 500;
    for i in 0..trials {
        let s = EnvState(vec![g.gen_range(0..10) as f64]);
        let policy = family.policies[g.gen_range(0..family.len())].clone();
        let spec = ValueQuerySpec::new(s, policy, g.gen_range(1..=20), 0.99).unwrap();
        let mc = policy_value_mc(&env, &spec, 1000, rng::derive(5, i)).unwrap();
        let dp = policy_value_dp(&env, &spec).unwrap();
        let gap = (mc.mean - dp).abs();
        // Deterministic returns (from the absorbing goal) have zero spread in exact arithmetic;
        // forward sums and backward induction then differ only by rounding.
        let rounding = 1e-12 * dp.abs().max(1.0);
        if gap <= 4.0 * mc.std_err + rounding {
            ok += 1;
        }
        if gap <= 4.0 * mc.std_err {
            strict += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let frac = ok as f64 / trials as f64;
    outcome(frac >= 0.99 && secs < 60.0, format!(
            "{ok}/{trials} within 4 std_err plus float rounding ({strict} without the rounding term) in {secs:.1}s"
        ))
}

fn gradient_rel_error(loss: Loss, seed: u64) -> f64 {
    let mut g = rng::seeded(seed);
    let (inputs, targets) = (3, 2);
    let net = Mlp::new(&[inputs, 8, 8, loss.net_outputs(targets)], &mut g);
    let mut set = TrainSet::new(inputs, targets);
    for _ in 0..10 {
        let x: Vec<f64> = (0..inputs).map(|_| g.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..targets).map(|_| g.gen_range(-2.0..2.0)).collect();
        set.push(&x, &y);
    }
    let idx: Vec<usize> = (0..10).collect();
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; net.n_params()];
    loss_and_grad(&net, loss, &set, &idx, Some(&mut grad), &mut ws);
    let h = 1e-5;
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_f = 0.0;
    for i in 0..net.n_params() {
        let mut plus = net.clone();
        plus.params[i] += h;
        let mut minus = net.clone();
        minus.params[i] -= h;
        let fd = (loss_and_grad(&plus, loss, &set, &idx, None, &mut ws)
            - loss_and_grad(&minus, loss, &set, &idx, None, &mut ws))
            / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        norm_a += grad[i].powi(2);
        norm_f += fd * fd;
    }
    diff.sqrt() / norm_a.sqrt().max(norm_f.sqrt()).max(1e-12)
}

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        worst = worst.max(gradient_rel_error(Loss::Mse, seed));
        worst = worst.max(gradient_rel_error(
            Loss::GaussianNll {
                logvar_clamp: (-10.0, 0.5),
            },
            1000 + seed,
        ));
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 50 networks per loss"),
    )
}

/// `Gamma(k / 2)` by the recursion `Gamma(x + 1) = x Gamma(x)` from `Gamma(1/2)` and `Gamma(1)`.
fn gamma_half(k: u32) -> f64 {
    let mut x = if k.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut arg = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while arg < k as f64 / 2.0 {
        x *= arg;
        arg += 1.0;
    }
    x
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
    let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

fn quadrature_t_cdf(x: f64, df: u32) -> f64 {
    let nu = df as f64;
    let norm = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let density = move |t: f64| norm * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0);
    let half = adaptive_simpson(&density, 0.0, x.abs(), 1e-14, 50);
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let votes = |less: usize, m: usize| {
        ValuePairs::new(
            (0..m)
                .map(|i| if i < less { (0.0, 1.0) } else { (1.0, 0.0) })
                .collect(),
        )
        .unwrap()
    };
    let diffs = |d: &[f64]| ValuePairs::new(d.iter().map(|&x| (x, 0.0)).collect()).unwrap();
    let pairs = |a: &[f64], b: &[f64]| {
        ValuePairs::new(a.iter().copied().zip(b.iter().copied()).collect()).unwrap()
    };
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-6;

    let a = confidence_ev(&votes(8, 10));
    check("ev 8/10", a.prediction && close(a.confidence, 0.6));
    let a = confidence_ev(&votes(10, 10));
    check("ev 10/10", a.prediction && close(a.confidence, 1.0));
    let a = confidence_ev(&votes(5, 10));
    check("ev 5/10", !a.prediction && close(a.confidence, 0.0));

    let a = confidence_pci(&diffs(&[-2.0, -2.0, -2.0])).unwrap();
    check("pci constant", a.prediction && close(a.confidence, 1.0));
    let a = confidence_pci(&diffs(&[1.0, -1.0])).unwrap();
    check("pci zero mean", !a.prediction && close(a.confidence, 0.0));
    let a = confidence_pci(&diffs(&[-1.0, -2.0, -3.0])).unwrap();
    let x = 2.0 * 3f64.sqrt();
    let expected = 2.0 * (0.5 + x / (2.0 * (x * x + 2.0f64).sqrt())) - 1.0;
    check(
        "pci df=2",
        a.prediction && close(a.confidence, expected) && (a.confidence - 0.9258).abs() < 1e-4,
    );
    check("pci one member", confidence_pci(&diffs(&[-1.0])).is_err());

    let a = confidence_upci(&pairs(&[5.0, 5.0], &[3.0, 3.0])).unwrap();
    check("upci degenerate", !a.prediction && close(a.confidence, 1.0));
    let a = confidence_upci(&pairs(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0])).unwrap();
    check("upci equal", !a.prediction && close(a.confidence, 0.0));
    let a = confidence_upci(&pairs(&[0.0, 2.0], &[10.0, 14.0])).unwrap();
    let expected = 2.0 * (0.5 + (11.0f64 / 3.0).atan() / std::f64::consts::PI) - 1.0;
    check(
        "upci cauchy",
        a.prediction && close(a.confidence, expected) && (a.confidence - 0.8304).abs() < 1e-4,
    );
    check(
        "upci one member",
        confidence_upci(&pairs(&[1.0], &[2.0])).is_err(),
    );
    check("methods", Method::ALL.len() == 3);

    check(
        "t_cdf(0)",
        [1, 2, 5, 10, 30]
            .iter()
            .all(|&df| t_cdf(0.0, df).unwrap() == 0.5),
    );
    check("t_cdf(1, 1)", close(t_cdf(1.0, 1).unwrap(), 0.75));
    let mut worst = 0.0f64;
    for df in [1, 2, 5, 10, 30] {
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            worst = worst.max((t_cdf(x, df).unwrap() - quadrature_t_cdf(x, df)).abs());
        }
    }
    check("t_cdf quadrature", worst <= 1e-8);
    let detail = if failures.is_empty() {
        format!("all examples within 1e-6; t_cdf vs quadrature max error {worst:.2e}")
    } else {
        format!(
            "failed: {}; t_cdf max error {worst:.2e}",
            failures.join(", ")
        )
    };
    outcome(failures.is_empty(), detail)
}

fn default_ev(rows: &[MetricsRow]) -> Vec<&MetricsRow> {
    rows.iter()
        .filter(|r| r.axis == "default" && r.method == "ev" && r.horizon == "all")
        .collect()
}

fn criterion_8(result: &SweepResult, secs: f64) -> Outcome {
    let rows = default_ev(&result.rows);
    let ok = rows.len() == 5
        && rows
            .iter()
            .all(|r| r.loss_full_coverage <= 0.15 && r.aurcc <= 0.8 * r.loss_full_coverage);
    let per_seed: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "seed {}: r_f {:.4} AURCC {:.5}",
                r.seed, r.loss_full_coverage, r.aurcc
            )
        })
        .collect();
    outcome(
        ok && secs < 300.0,
        format!("{}; {secs:.0}s", per_seed.join(", ")),
    )
}

fn criterion_9() -> Outcome {
    let started = Instant::now();
    let result = run_sweep(&config("maze-open.toml"), 1).unwrap();
    let at = |seed: u64, h: &str| {
        result
            .rows
            .iter()
            .find(|r| r.axis == "horizon" && r.method == "ev" && r.horizon == h && r.seed == seed)
            .map(|r| r.aurcc)
            .unwrap()
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let (short, long) = (at(seed, "10"), at(seed, "50"));
        if long >= short {
            wins += 1;
        }
        parts.push(format!("{short:.4}/{long:.4}"));
    }
    outcome(
        wins >= 4,
        format!(
            "AURCC h=10/h=50 per seed [{}], {wins}/5 seeds hold; {:.0}s",
            parts.join(", "),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10(first: &SweepResult) -> Outcome {
    let cfg = config("chain.toml");
    let second = run_sweep(&cfg, 1).unwrap();
    let base = std::env::temp_dir().join(format!("opcc-acceptance-{}", std::process::id()));
    let (a, b) = (base.join("a"), base.join("b"));
    write_results(first, &a).unwrap();
    write_results(&second, &b).unwrap();
    let bytes_a = std::fs::read(a.join("metrics.csv")).unwrap();
    let bytes_b = std::fs::read(b.join("metrics.csv")).unwrap();
    let same = bytes_a == bytes_b && metrics_csv(&first.rows).unwrap().into_bytes() == bytes_a;
    let _ = std::fs::remove_dir_all(&base);
    outcome(
        same,
        format!("metrics.csv {} bytes, identical: {same}", bytes_a.len()),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!(
            "criterion {n:>2}: {} | {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());

    let started = Instant::now();
    let chain = run_sweep(&config("chain.toml"), 1).unwrap();
    let secs = started.elapsed().as_secs_f64();
    report(8, criterion_8(&chain, secs));
    report(4, criterion_4(&chain.curves));
    report(9, criterion_9());
    report(10, criterion_10(&chain));

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("all {} acceptance criteria passed", results.len());
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
