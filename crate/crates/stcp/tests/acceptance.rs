//! Acceptance suite. Each test prints one `PASS`/`FAIL` line.
//!
//! The Monte-Carlo criteria take from minutes to over an hour on one core
//! and are ignored by default:
//!
//! ```text
//! cargo test --release -p stcp --test acceptance -- --include-ignored --nocapture --test-threads 1
//! ```

use std::fs;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use stcp::run::run_report;
use stcp_core::align::{AlignProblem, AlignmentConfig};
use stcp_core::calib::{
    conformal_quantile, debias_grid, debiased_cdf, debiased_raw, empirical_cdf, mixture_cdf_eval, mixture_cdf_quantile,
    AlphaLevels,
};
use stcp_core::data::{derive_stream, standard_normal, SeedSpec, Stream};
use stcp_core::predictors::CondCdfParams;
use stcp_core::simlab::{
    metric_std, ExperimentConfig, ExperimentReport, Method, ScoreType, SigmaFamily, SyntheticSetting,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id:>2} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn logabs() -> SyntheticSetting {
    SyntheticSetting::new(SigmaFamily::LogAbs, 5)
}

fn config(setting: SyntheticSetting, score: ScoreType, methods: &[Method], repeats: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(setting);
    c.score_type = score;
    c.methods = methods.to_vec();
    c.repeats = repeats;
    c.base_seed = seed;
    c
}

fn run(c: &ExperimentConfig) -> ExperimentReport {
    run_report(c, None).expect("experiment runs")
}

fn marginal(r: &ExperimentReport, m: Method) -> f64 {
    r.find(m, None).expect("method aggregated").mean_marginal
}

fn std_of(r: &ExperimentReport, m: Method, lambda: Option<f64>) -> f64 {
    r.find(m, lambda)
        .and_then(|a| a.std_of_mean_size)
        .expect("method aggregated over several repeats")
}

// LogAbs, GLCP, n = 30, m = 500, K = 21, 50 repeats; shared by the
// lambda = 0 recovery, stability and variance-trend criteria
fn glcp_sweep() -> &'static ExperimentReport {
    static RUN: OnceLock<ExperimentReport> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut c = config(logabs(), ScoreType::Glcp, &[Method::Base, Method::Stcp], 50, 2024);
        c.lambda_grid = vec![0.0, 1.0, 10.0, 100.0, 1000.0];
        run(&c)
    })
}

#[test]
fn c01_base_coverage_band() {
    let mut c = config(logabs(), ScoreType::Residual, &[Method::Base], 2000, 101);
    c.n_test = 200;
    let start = Instant::now();
    let r = run(&c);
    let secs = start.elapsed().as_secs_f64();
    let cov = marginal(&r, Method::Base);
    let pass = (0.890..=0.9423).contains(&cov) && secs < 60.0;
    report(
        1,
        "base coverage band",
        pass,
        &format!("mean marginal coverage {cov:.4} in [0.890, 0.9423], runtime {secs:.1} s (target < 60 s)"),
    );
    assert!(pass);
}

#[test]
#[ignore = "Monte-Carlo, several minutes"]
fn c02_lambda_zero_recovery() {
    let r = glcp_sweep();
    let base: Vec<_> = r.records.iter().filter(|x| x.method == Method::Base).collect();
    let zero: Vec<_> = r
        .records
        .iter()
        .filter(|x| x.method == Method::Stcp && x.lambda_used == Some(0.0))
        .collect();
    assert_eq!(base.len(), zero.len());
    let mut within = 0;
    let mut unflagged_misses = 0;
    let mut worst: f64 = 0.0;
    for (b, z) in base.iter().zip(&zero) {
        assert_eq!(b.repeat_index, z.repeat_index);
        let gap = (b.q_hat - z.q_hat).abs();
        worst = worst.max(gap);
        if gap <= 1e-3 {
            within += 1;
        } else if !z.flags.not_converged {
            unflagged_misses += 1;
        }
    }
    let flagged = zero.iter().filter(|z| z.flags.not_converged).count();
    let pass = within >= 49 && unflagged_misses == 0;
    report(
        2,
        "lambda = 0 recovery",
        pass,
        &format!(
            "{within}/{} repeats within 1e-3 of the conformal quantile (need 49), {flagged} flagged not converged, \
             {unflagged_misses} unflagged misses, largest gap {worst:.3e}",
            zero.len()
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "Monte-Carlo, over an hour on one core"]
fn c03_selection_coverage_band() {
    let mut c = config(logabs(), ScoreType::Residual, &[Method::StcpSel], 2000, 303);
    c.alpha_tol = 0.02;
    c.lambda_grid = vec![0.0, 1.0, 10.0, 100.0, 1000.0];
    c.n_test = 200;
    let r = run(&c);
    let cov = marginal(&r, Method::StcpSel);
    let (lo, hi) = (0.880 - 0.01, 0.920 + 1.0 / 31.0 + 0.01);
    let fallbacks = r.selections.iter().filter(|s| s.infeasible_fallback).count();
    let pass = (lo..=hi).contains(&cov);
    report(
        3,
        "selected-lambda coverage band",
        pass,
        &format!("coverage {cov:.4} in [{lo:.4}, {hi:.4}] over 2000 repeats ({fallbacks} infeasible fallbacks)"),
    );
    assert!(pass);
}

#[test]
#[ignore = "Monte-Carlo, several minutes"]
fn c04_stability_reduction() {
    let r = glcp_sweep();
    let base = std_of(r, Method::Base, None);
    let mut lines = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for a in r.aggregates.iter().filter(|a| a.method == Method::Stcp) {
        let lambda = a.lambda.unwrap();
        let std = a.std_of_mean_size.unwrap();
        lines.push(format!("lambda {lambda}: Std {std:.4}, marginal {:.4}", a.mean_marginal));
        let ok = std.is_finite() && (0.89..=0.9323 + 0.01).contains(&a.mean_marginal);
        if ok && best.is_none_or(|(s, _)| std < s) {
            best = Some((std, lambda));
        }
    }
    let pass = best.is_some_and(|(s, _)| s <= 0.85 * base);
    let chosen = match best {
        Some((s, l)) => format!("best admissible lambda {l} with Std {s:.4}"),
        None => "no lambda has finite Std and marginal in [0.89, 0.9423]".into(),
    };
    report(
        4,
        "stability reduction",
        pass,
        &format!("base Std {base:.4}, bound {:.4}; {chosen}; [{}]", 0.85 * base, lines.join("; ")),
    );
    assert!(pass);
}

#[test]
#[ignore = "Monte-Carlo, several minutes"]
fn c05_threshold_variance_trend() {
    let r = glcp_sweep();
    let lambdas = [0.0, 10.0, 100.0, 1000.0];
    let stds: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let q: Vec<f64> = r
                .records
                .iter()
                .filter(|x| x.method == Method::Stcp && x.lambda_used == Some(l))
                .map(|x| x.q_hat)
                .collect();
            metric_std(&q).unwrap()
        })
        .collect();
    let pass = stds.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let shown: Vec<String> = lambdas.iter().zip(&stds).map(|(l, s)| format!("{l}: {s:.4}")).collect();
    report(
        5,
        "threshold variance nonincreasing in lambda",
        pass,
        &format!("Std(q) by lambda [{}], 10% slack", shown.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c06_oracle_dominance() {
    let mut pass = true;
    let mut parts = Vec::new();
    for family in SigmaFamily::ALL {
        let c = config(
            SyntheticSetting::new(family, 5),
            ScoreType::Glcp,
            &[Method::Base, Method::Oracle],
            50,
            2024,
        );
        let r = run(&c);
        let (base, oracle) = (std_of(&r, Method::Base, None), std_of(&r, Method::Oracle, None));
        pass &= oracle <= base;
        parts.push(format!("{}: oracle {oracle:.4} vs base {base:.4}", family.name()));
    }
    report(6, "oracle dominance", pass, &parts.join("; "));
    assert!(pass);
}

#[test]
#[ignore = "Monte-Carlo, tens of minutes"]
fn c07_dp_fragility() {
    let mut c = config(logabs(), ScoreType::Residual, &[Method::Dp, Method::StcpSel], 500, 707);
    c.theta_shift = -0.5;
    c.alpha_tol = 0.02;
    c.n_test = 200;
    let r = run(&c);
    let dp = marginal(&r, Method::Dp);
    let sel = marginal(&r, Method::StcpSel);
    let (lo, hi) = (0.880 - 0.01, 0.920 + 1.0 / 31.0 + 0.01);
    let pass = dp < 0.88 && (lo..=hi).contains(&sel);
    report(
        7,
        "DP fragility under a shifted source model",
        pass,
        &format!("dp coverage {dp:.4} (< 0.88), stcp_sel coverage {sel:.4} in [{lo:.4}, {hi:.4}]"),
    );
    assert!(pass);
}

fn random_theta(s: &mut Stream, d: usize) -> CondCdfParams {
    CondCdfParams {
        loc_weights: (0..d).map(|_| 0.5 * standard_normal(s)).collect(),
        loc_intercept: standard_normal(s),
        scale_weights: (0..d).map(|_| 0.3 * standard_normal(s)).collect(),
        scale_intercept: 0.5 + 0.3 * standard_normal(s),
    }
}

fn random_points(s: &mut Stream, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..d).map(|_| standard_normal(s)).collect()).collect()
}

#[test]
fn c08_gradient_oracle() {
    let mut s = derive_stream(SeedSpec::new(808, 0));
    let levels = AlphaLevels::new(0.1, 30).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 1 + i % 5;
        let theta_hat = random_theta(&mut s, d);
        let unlabeled = random_points(&mut s, 40, d);
        let scores: Vec<f64> = (0..30).map(|_| 1.0 + standard_normal(&mut s)).collect();
        let align = AlignmentConfig {
            lambda: 10.0 * s.uniform(),
            ..AlignmentConfig::default()
        };
        let p = AlignProblem::from_scores(&theta_hat, &scores, &unlabeled, levels, &align).unwrap();
        let flat = random_theta(&mut s, d).to_flat();
        let eval = p.evaluate(&flat, None).unwrap();
        let g = p.gradient(&flat, &eval.quantiles).unwrap();
        let fd: Vec<f64> = (0..flat.len())
            .map(|j| {
                let (mut up, mut dn) = (flat.clone(), flat.clone());
                up[j] += h;
                dn[j] -= h;
                (p.evaluate(&up, None).unwrap().objective - p.evaluate(&dn, None).unwrap().objective) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale;
        worst = worst.max(err);
    }
    let pass = worst <= 1e-4;
    report(
        8,
        "alignment gradient vs central differences",
        pass,
        &format!("max relative error {worst:.2e} over 100 instances (<= 1e-4)"),
    );
    assert!(pass);
}

#[test]
fn c09_quantile_inverses() {
    let mut s = derive_stream(SeedSpec::new(909, 0));
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 1 + i % 5;
        let theta = random_theta(&mut s, d);
        let unlabeled = random_points(&mut s, 50, d);
        for k in 1..=99 {
            let u = k as f64 / 100.0;
            let q = mixture_cdf_quantile(&theta, u, &unlabeled, 1e-12).unwrap();
            worst = worst.max((mixture_cdf_eval(&theta, q, &unlabeled).unwrap() - u).abs());
        }
    }

    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = 1 + s.index(200);
        let alpha = 0.01 + 0.98 * s.uniform();
        // ties are likely with rounded scores
        let scores: Vec<f64> = (0..n).map(|_| (4.0 * standard_normal(&mut s)).round() / 4.0).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        // integer form of ceil((1 - alpha)(n + 1)), free of float rounding
        let k = (0..=n + 1).find(|&k| k as f64 >= (1.0 - alpha) * (n + 1) as f64).unwrap();
        let expected = if k > n { f64::INFINITY } else { sorted[k.max(1) - 1] };
        if conformal_quantile(&scores, alpha).unwrap() != expected {
            mismatches += 1;
        }
    }
    let pass = worst <= 1e-10 && mismatches == 0;
    report(
        9,
        "quantile and CDF inverses",
        pass,
        &format!(
            "max |F(Q(u)) - u| = {worst:.2e} over 100 models x 99 levels; {mismatches}/1000 conformal quantile mismatches"
        ),
    );
    assert!(pass);
}

#[test]
fn c10_debiased_estimator() {
    let mut s = derive_stream(SeedSpec::new(1010, 0));
    let mut worst: f64 = 0.0;
    let mut invalid = 0;
    for i in 0..50 {
        let d = 1 + i % 4;
        let theta = random_theta(&mut s, d);
        let n = 5 + s.index(60);
        let labeled = random_points(&mut s, n, d);
        let m = 20 + s.index(200);
        let unlabeled = random_points(&mut s, m, d);
        // a shifted score sample makes the correction large and the raw values leave [0, 1]
        let shift = 3.0 * standard_normal(&mut s);
        let scores: Vec<f64> = (0..n).map(|_| shift + 2.0 * standard_normal(&mut s)).collect();
        let f0 = empirical_cdf(&scores).unwrap();
        let grid = debias_grid(&scores, &theta, &labeled, &unlabeled).unwrap();
        let raw = debiased_raw(&f0, &theta, &labeled, &unlabeled, &grid).unwrap();
        for (&t, &r) in grid.iter().zip(&raw) {
            // the three sums written out term by term
            let count = scores.iter().filter(|&&v| v <= t).count() as f64 / n as f64;
            let model = |xs: &[Vec<f64>]| {
                xs.iter()
                    .map(|x| {
                        let ls = theta.loc_scale(x);
                        0.5 * libm::erfc(-(t - ls.mu) / (ls.sigma * std::f64::consts::SQRT_2))
                    })
                    .sum::<f64>()
                    / xs.len() as f64
            };
            worst = worst.max((r - (count + model(&unlabeled) - model(&labeled))).abs());
        }
        let cdf = debiased_cdf(&f0, &theta, &labeled, &unlabeled, &grid).unwrap();
        let c = cdf.cumulative();
        let valid = c.windows(2).all(|w| w[0] <= w[1])
            && c.iter().all(|v| (0.0..=1.0).contains(v))
            && *c.last().unwrap() == 1.0;
        if !valid {
            invalid += 1;
        }
    }
    let pass = worst <= 1e-12 && invalid == 0;
    report(
        10,
        "debiased estimator algebra",
        pass,
        &format!("max |raw - direct sum| = {worst:.2e} (<= 1e-12); {invalid}/50 post-processed outputs invalid"),
    );
    assert!(pass);
}

#[test]
fn c11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    // every method, so every code path contributes to the bytes
    fs::write(
        &config_path,
        r#"{"n": 30, "m": 100, "N": 400, "n_test": 200, "repeats": 4, "base_seed": 1111,
            "lambda_grid": [0, 10, 1000], "oracle_extra": 300, "fit_steps": 200}"#,
    )
    .unwrap();
    let records = |threads: &str, out: &str| {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_stcp"))
            .args(["simulate", "--threads", threads, "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("records.csv")).unwrap()
    };
    let a = records("1", "a");
    let b = records("1", "b");
    let c = records("2", "c");
    // the base coverage run, as configured above
    fs::write(
        &config_path,
        r#"{"repeats": 2000, "base_seed": 101, "n_test": 200, "score_type": "residual", "methods": ["base"]}"#,
    )
    .unwrap();
    let d = records("1", "d");
    let e = records("2", "e");
    let pass = a == b && a == c && d == e;
    report(
        11,
        "determinism",
        pass,
        &format!(
            "records.csv identical across repeated runs and thread counts ({} bytes all methods, {} bytes base run)",
            a.len(),
            d.len()
        ),
    );
    assert!(pass);
}
