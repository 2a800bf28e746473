//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Every tolerance is pinned below.
//!
//! Set `ACCEPTANCE_ONLY=1,6,9` to run a subset.

use std::f64::consts::SQRT_2;
use std::time::Instant;

use rayon::prelude::*;

use sdeboot::adjustment::{b1n, b2n, scalings};
use sdeboot::bootstrap::{
    block_sums, distribution, draw_weights, ks_distance, score_draw, BlockPartition,
    BootstrapMode, BootstrapSettings, EstimatorContext, WeightScheme,
};
use sdeboot::experiment::{run_coverage, to_canonical_json, write_report, ExperimentConfig, ReportFormat};
use sdeboot::gqmle::{
    cross_hessian, drift_hessian, drift_score, eta, fit, hessians, scale_hessian, scale_score,
    zeta, FitOptions,
};
use sdeboot::model::{preset_experiment_model, registry, SamplingDesign, TrueDynamics};
use sdeboot::noise::{NoiseKind, RngStream, StreamRole};
use sdeboot::simulate::{simulate, SamplePath};

const BASE_SEED: u64 = 20_240_601;

// Criterion 1
const TABLE_TOL: f64 = 0.03;
// Criterion 2
const SMOKE_RANGE: (f64, f64) = (0.85, 1.00);
const SMOKE_SECONDS: f64 = 60.0;
// Criteria 3 to 5
const RATE_REL_TOL: f64 = 0.25;
// Criterion 6
const REGIME_DIFFUSION_TOL: f64 = 0.10;
const REGIME_JUMP_TOL: f64 = 0.15;
const REGIME_MISSPEC_FACTOR: f64 = 10.0;
// Criterion 7
const IDENTITY_TOL: f64 = 1e-10;
const HESSIAN_FD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
// Criterion 8
const MOMENT_SE: f64 = 4.0;
// Criterion 9
const KS_TOL: f64 = 0.05;

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

fn path_for(dynamics: &TrueDynamics, n: usize, h: f64, seed: u64, m: u64) -> SamplePath {
    let design = SamplingDesign::new(n, h).expect("valid design");
    let mut rng = RngStream::for_role(seed, StreamRole::Path, m, 0);
    simulate(dynamics, design, 1, &mut rng).expect("simulation")
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Vec<(String, Outcome)> {
    let table = [
        (100_000, 500.0, 25, NoiseKind::Wiener, 0.962),
        (100_000, 500.0, 50, NoiseKind::Wiener, 0.969),
        (50_000, 200.0, 25, NoiseKind::Wiener, 0.935),
        (50_000, 200.0, 50, NoiseKind::Wiener, 0.939),
        (100_000, 500.0, 25, NoiseKind::standard_bilateral_gamma(), 0.952),
        (100_000, 500.0, 50, NoiseKind::standard_bilateral_gamma(), 0.944),
        (50_000, 200.0, 25, NoiseKind::standard_bilateral_gamma(), 0.924),
        (50_000, 200.0, 50, NoiseKind::standard_bilateral_gamma(), 0.907),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, &(n, t, k, noise, published))| {
            let cfg = ExperimentConfig {
                noise,
                n,
                horizon: t,
                k,
                paths: 1000,
                reps: 1000,
                level: 0.99,
                seed: BASE_SEED + 100 + i as u64,
                ..Default::default()
            };
            let label = format!("1{} n={n} T={t} k={k} {}", (b'a' + i as u8) as char, noise);
            let o = match run_coverage(&cfg) {
                Ok(r) => outcome(
                    (r.coverage - published).abs() <= TABLE_TOL,
                    format!(
                        "coverage {:.3} vs {published} (tol {TABLE_TOL}), {} failed paths, {:.0}s",
                        r.coverage, r.failed, r.wall_seconds
                    ),
                ),
                Err(e) => outcome(false, format!("error: {e}")),
            };
            (label, o)
        })
        .collect()
}

fn criterion_2() -> Vec<(String, Outcome)> {
    [NoiseKind::Wiener, NoiseKind::standard_bilateral_gamma()]
        .iter()
        .enumerate()
        .map(|(i, &noise)| {
            let cfg = ExperimentConfig {
                noise,
                n: 20_000,
                horizon: 100.0,
                k: 20,
                paths: 200,
                reps: 200,
                seed: BASE_SEED + 200 + i as u64,
                ..Default::default()
            };
            let start = Instant::now();
            let o = match run_coverage(&cfg) {
                Ok(r) => {
                    let secs = start.elapsed().as_secs_f64();
                    outcome(
                        r.coverage >= SMOKE_RANGE.0 && r.coverage <= SMOKE_RANGE.1 && secs <= SMOKE_SECONDS,
                        format!(
                            "coverage {:.3} in [{}, {}], {secs:.1}s (limit {SMOKE_SECONDS}s)",
                            r.coverage, SMOKE_RANGE.0, SMOKE_RANGE.1
                        ),
                    )
                }
                Err(e) => outcome(false, format!("error: {e}")),
            };
            (format!("2{} smoke {noise}", (b'a' + i as u8) as char), o)
        })
        .collect()
}

/// Fits `model_name` on `paths` simulated paths and returns the estimates.
fn replicate_fits(model_name: &str, noise: NoiseKind, n: usize, h: f64, paths: usize, seed: u64) -> Vec<Vec<f64>> {
    let preset = registry(model_name).expect("registered model");
    let dynamics = preset.dynamics.clone().with_noise(noise);
    (0..paths)
        .into_par_iter()
        .map(|m| {
            let path = path_for(&dynamics, n, h, seed, m as u64);
            fit(&path, &preset.model, &FitOptions::default())
                .expect("fit")
                .theta()
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let (n, h) = (100_000, 0.005);
    let fits = replicate_fits("ou_const_scale", NoiseKind::Wiener, n, h, 500, BASE_SEED + 300);
    let z: Vec<f64> = fits.iter().map(|t| (n as f64).sqrt() * (t[0] - 1.0)).collect();
    let v = sample_variance(&z);
    outcome(
        rel_err(v, 0.5) <= RATE_REL_TOL,
        format!("Var √n(γ̂−1) = {v:.4} vs 0.5 (±{:.0}%)", RATE_REL_TOL * 100.0),
    )
}

fn criterion_4() -> Outcome {
    let (n, h) = (100_000, 0.005);
    let fits = replicate_fits("ou_linear_drift", NoiseKind::Wiener, n, h, 500, BASE_SEED + 400);
    let t = n as f64 * h;
    let z: Vec<f64> = fits.iter().map(|th| t.sqrt() * (th[1] + 0.5)).collect();
    let v = sample_variance(&z);
    outcome(
        rel_err(v, 1.0) <= RATE_REL_TOL,
        format!("Var √T(α̂+1/2) = {v:.4} vs 1.0 (±{:.0}%)", RATE_REL_TOL * 100.0),
    )
}

fn criterion_5() -> Outcome {
    let (n, h) = (100_000, 0.005);
    let noise = NoiseKind::standard_bilateral_gamma();
    let fits = replicate_fits("ou_const_scale", noise, n, h, 500, BASE_SEED + 500);
    let t = n as f64 * h;
    let z: Vec<f64> = fits.iter().map(|th| t.sqrt() * (th[0] - 1.0)).collect();
    let v = sample_variance(&z);
    outcome(
        rel_err(v, 0.75) <= RATE_REL_TOL,
        format!("Var √T(γ̂−1) = {v:.4} vs 0.75 (±{:.0}%)", RATE_REL_TOL * 100.0),
    )
}

/// `∫C⁴π₀ / ∫C²π₀` from a long auxiliary path of horizon 5000.
fn ergodic_ratio(dynamics: &TrueDynamics, seed: u64) -> f64 {
    let design = SamplingDesign::new(1_000_000, 0.005).expect("valid design");
    let mut rng = RngStream::for_role(seed, StreamRole::Auxiliary, 0, 0);
    let path = simulate(dynamics, design, 1, &mut rng).expect("simulation");
    let (mut s2, mut s4) = (0.0, 0.0);
    for &x in path.values() {
        let c2 = dynamics.scale(x).powi(2);
        s2 += c2;
        s4 += c2 * c2;
    }
    s4 / s2
}

fn criterion_6() -> Vec<(String, Outcome)> {
    let mut out = Vec::new();

    // (i) correctly specified diffusion with non-constant scale
    let preset = registry("tanh_rational").expect("registered model");
    let path = path_for(&preset.dynamics, 100_000, 0.005, BASE_SEED + 600, 0);
    let fitted = fit(&path, &preset.model, &FitOptions::default()).expect("fit");
    let s = scalings(&path, &preset.model, &fitted).expect("scalings");
    let oracle = ergodic_ratio(&preset.dynamics, BASE_SEED + 600);
    let ratio = s.b / (3.0 * path.h());
    out.push((
        "6i correctly specified diffusion".to_string(),
        outcome(
            rel_err(ratio, oracle) <= REGIME_DIFFUSION_TOL,
            format!(
                "b/(3h) = {ratio:.4} vs oracle {oracle:.4} (±{:.0}%), b1 = {:.3e}, b2 = {:.3e}",
                REGIME_DIFFUSION_TOL * 100.0,
                s.b1,
                s.b2
            ),
        ),
    ));

    // (ii) misspecified diffusion: the preset under Wiener noise. b tends to a
    // positive constant (about 0.05 here) while 3h vanishes; the assertion uses
    // a step at which 10h lies clearly below that constant, and the coarser
    // h = 0.005 is reported for reference.
    let (model, dynamics) = preset_experiment_model();
    let b_over = |n: usize, h: f64, seed: u64| -> Vec<f64> {
        (0..10)
            .into_par_iter()
            .map(|m| {
                let path = path_for(&dynamics, n, h, seed, m);
                let f = fit(&path, &model, &FitOptions::default()).expect("fit");
                scalings(&path, &model, &f).expect("scalings").b
            })
            .collect()
    };
    let h = 0.001;
    let bs = b_over(500_000, h, BASE_SEED + 610);
    let min_b = bs.iter().copied().fold(f64::INFINITY, f64::min);
    let coarse_h = 0.005;
    let coarse_bs = b_over(100_000, coarse_h, BASE_SEED + 611);
    let above = coarse_bs.iter().filter(|b| **b > REGIME_MISSPEC_FACTOR * coarse_h).count();
    let median = {
        let mut v = coarse_bs.clone();
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    out.push((
        "6ii misspecified diffusion".to_string(),
        outcome(
            min_b > REGIME_MISSPEC_FACTOR * h,
            format!(
                "h = {h}: min b over 10 paths = {min_b:.4} > {REGIME_MISSPEC_FACTOR}h = {:.3}; \
                 at h = {coarse_h}: median b = {median:.4}, {above}/10 paths above {:.3}",
                REGIME_MISSPEC_FACTOR * h,
                REGIME_MISSPEC_FACTOR * coarse_h
            ),
        ),
    ));

    // (iii) pure jump: b → ∫C⁴π₀ · ∫z⁴ν₀ / ∫C²π₀; a long path keeps the
    // heavy fourth-moment noise of b₁ within tolerance
    let h = coarse_h;
    let dynamics = dynamics.with_noise(NoiseKind::standard_bilateral_gamma());
    let path = path_for(&dynamics, 10_000_000, h, BASE_SEED + 620, 0);
    let b = b1n(&path).expect("b1") + b2n(&path, &model, &[SQRT_2]).expect("b2");
    let oracle = 3.0 * ergodic_ratio(&dynamics, BASE_SEED + 620);
    out.push((
        "6iii pure jump".to_string(),
        outcome(
            rel_err(b, oracle) <= REGIME_JUMP_TOL,
            format!(
                "b = {b:.4} vs oracle {oracle:.4} (±{:.0}%), T = {}",
                REGIME_JUMP_TOL * 100.0,
                path.horizon()
            ),
        ),
    ));
    out
}

fn criterion_7() -> Vec<(String, Outcome)> {
    let mut out = Vec::new();

    // unit weights
    let preset = registry("ou_linear_drift").expect("registered model");
    let path = path_for(&preset.dynamics, 20_000, 0.01, BASE_SEED + 700, 0);
    let f = fit(&path, &preset.model, &FitOptions::default()).expect("fit");
    let s = scalings(&path, &preset.model, &f).expect("scalings");
    let part = BlockPartition::new(path.n(), 40).expect("partition");
    let sums = block_sums(&path, &preset.model, &f, &part).expect("sums");
    let zero = score_draw(&sums, &[1.0; 40], &s).expect("draw");
    let ctx = EstimatorContext::new(&path, &preset.model, &f, part, FitOptions::default()).expect("ctx");
    let tb = ctx.solve(&[1.0; 40]).expect("solve");
    let worst = tb
        .iter()
        .zip(f.theta())
        .map(|(a, b)| rel_err(*a, b))
        .fold(0.0, f64::max);
    out.push((
        "7a unit weights".to_string(),
        outcome(
            zero.iter().all(|v| *v == 0.0) && worst <= IDENTITY_TOL,
            format!("score draw {zero:?}, max rel |θ̂ᴮ − θ̂| = {worst:.1e}"),
        ),
    ));

    // score identities on a model with vector parameters
    let preset = registry("tanh_rational").expect("registered model");
    let m = &preset.model;
    let path = path_for(&preset.dynamics, 20_000, 0.01, BASE_SEED + 710, 0);
    let gamma = [0.65, 0.45];
    let alpha = [0.9, 0.7];
    let h = path.h();
    let mut zsum = [0.0; 2];
    let mut esum = [0.0; 2];
    for j in 1..=path.n() {
        let z = zeta(&path, m, &gamma, j).expect("zeta");
        let e = eta(&path, m, &alpha, &gamma, j).expect("eta");
        for c in 0..2 {
            zsum[c] += z[c];
            esum[c] += e[c];
        }
    }
    let g1 = scale_score(&path, m, &gamma).expect("score");
    let g2 = drift_score(&path, m, &alpha, &gamma).expect("score");
    let e1 = (0..2).map(|c| rel_err(g1[c], -zsum[c] / h)).fold(0.0, f64::max);
    let e2 = (0..2).map(|c| rel_err(g2[c], esum[c])).fold(0.0, f64::max);
    out.push((
        "7b score identities".to_string(),
        outcome(
            e1 <= IDENTITY_TOL && e2 <= IDENTITY_TOL,
            format!("∂γH₁ vs −(1/h)Σζ: {e1:.1e}; ∂αH₂ vs Ση: {e2:.1e}"),
        ),
    ));

    // analytic Hessians against central differences of the analytic scores
    let fd = |f: &dyn Fn(&[f64]) -> Vec<f64>, at: &[f64], i: usize| -> Vec<f64> {
        let mut up = at.to_vec();
        let mut dn = at.to_vec();
        up[i] += FD_STEP;
        dn[i] -= FD_STEP;
        f(&up)
            .iter()
            .zip(f(&dn))
            .map(|(a, b)| (a - b) / (2.0 * FD_STEP))
            .collect()
    };
    let hg = scale_hessian(&path, m, &gamma).expect("hessian");
    let ha = drift_hessian(&path, m, &alpha, &gamma).expect("hessian");
    let hc = cross_hessian(&path, m, &alpha, &gamma).expect("hessian");
    let mut worst: f64 = 0.0;
    let scale = hg.amax().max(ha.amax()).max(hc.amax());
    for i in 0..2 {
        let col = fd(&|g| scale_score(&path, m, g).unwrap(), &gamma, i);
        let cola = fd(&|a| drift_score(&path, m, a, &gamma).unwrap(), &alpha, i);
        let colc = fd(&|g| drift_score(&path, m, &alpha, g).unwrap(), &gamma, i);
        for r in 0..2 {
            worst = worst.max((hg[(r, i)] - col[r]).abs() / scale);
            worst = worst.max((ha[(r, i)] - cola[r]).abs() / scale);
            worst = worst.max((hc[(r, i)] - colc[r]).abs() / scale);
        }
    }
    out.push((
        "7c Hessians vs finite differences".to_string(),
        outcome(
            worst <= HESSIAN_FD_TOL,
            format!("max relative deviation {worst:.1e} (tol {HESSIAN_FD_TOL:.0e})"),
        ),
    ));
    out
}

fn criterion_8() -> Vec<(String, Outcome)> {
    [WeightScheme::ShiftedMammen, WeightScheme::ScaledBeta]
        .iter()
        .enumerate()
        .map(|(i, &scheme)| {
            let mut rng = RngStream::for_role(BASE_SEED + 800 + i as u64, StreamRole::Weights, 0, 0);
            let w = draw_weights(scheme, 1_000_000, &mut rng);
            let n = w.len() as f64;
            let central = |k: i32| w.iter().map(|v| (v - 1.0).powi(k)).sum::<f64>() / n;
            let mean = w.iter().sum::<f64>() / n;
            let (m2, m3, m4, m6) = (central(2), central(3), central(4), central(6));
            // standard errors of the sample moments about the known centre 1
            let se = [(m2 / n).sqrt(), ((m4 - m2 * m2) / n).sqrt(), ((m6 - m3 * m3) / n).sqrt()];
            let dev = [(mean - 1.0).abs(), (m2 - 1.0).abs(), (m3 - 1.0).abs()];
            let ok = w.iter().all(|v| *v >= 0.0) && dev.iter().zip(&se).all(|(d, s)| *d <= MOMENT_SE * s);
            (
                format!("8{} weights {scheme}", (b'a' + i as u8) as char),
                outcome(
                    ok,
                    format!(
                        "mean {mean:.4}, var {m2:.4}, third {m3:.4}; deviations in SE: {:.2}, {:.2}, {:.2}",
                        dev[0] / se[0],
                        dev[1] / se[1],
                        dev[2] / se[2]
                    ),
                ),
            )
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let (model, dynamics) = preset_experiment_model();
    let path = path_for(&dynamics, 100_000, 0.005, BASE_SEED + 900, 0);
    let f = fit(&path, &model, &FitOptions::default()).expect("fit");
    let s = scalings(&path, &model, &f).expect("scalings");
    let (_, bar) = hessians(&f);
    let part = BlockPartition::new(path.n(), 25).expect("partition");
    let mut settings = BootstrapSettings {
        scheme: WeightScheme::ScaledBeta,
        replications: 2000,
        mode: BootstrapMode::ScoreShortcut,
        seed: BASE_SEED + 901,
        path_index: 0,
        fit_options: FitOptions::default(),
    };
    let short = distribution(&path, &model, &f, &s, &bar, &part, &settings).expect("shortcut");
    settings.mode = BootstrapMode::FullEstimator;
    let full = distribution(&path, &model, &f, &s, &bar, &part, &settings).expect("estimator");
    let d = ks_distance(&short.column(0), &full.column(0));
    outcome(d < KS_TOL, format!("KS distance {d:.4} < {KS_TOL} at R = 2000"))
}

fn criterion_10() -> Outcome {
    let base = ExperimentConfig {
        noise: NoiseKind::standard_bilateral_gamma(),
        n: 20_000,
        horizon: 100.0,
        k: 20,
        paths: 24,
        reps: 200,
        seed: BASE_SEED + 1000,
        ..Default::default()
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let mut files = Vec::new();
    for threads in [1, 2, 4] {
        let cfg = ExperimentConfig {
            parallelism: threads,
            ..base.clone()
        };
        let report = run_coverage(&cfg).expect("coverage");
        let json = dir.path().join(format!("r{threads}.json"));
        let csv = dir.path().join(format!("r{threads}.csv"));
        write_report(&report, &json, ReportFormat::Json).expect("json");
        write_report(&report, &csv, ReportFormat::Csv).expect("csv");
        files.push((
            std::fs::read(&json).expect("read"),
            std::fs::read(&csv).expect("read"),
            to_canonical_json(&report).expect("json"),
        ));
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("JSON and CSV reports identical across 1, 2 and 4 threads: {same}"))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));

    let mut failures = 0;
    let mut report = |label: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!("{tag} [{label}] {}", o.detail);
    };
    let timed = |c: u32| {
        let start = Instant::now();
        move || eprintln!("  criterion {c} took {:.1}s", start.elapsed().as_secs_f64())
    };

    if wanted(1) {
        let done = timed(1);
        for (l, o) in criterion_1() {
            report(&l, o);
        }
        done();
    }
    if wanted(2) {
        for (l, o) in criterion_2() {
            report(&l, o);
        }
    }
    if wanted(3) {
        report("3 diffusion scale rate", criterion_3());
    }
    if wanted(4) {
        report("4 drift rate", criterion_4());
    }
    if wanted(5) {
        report("5 pure-jump scale rate", criterion_5());
    }
    if wanted(6) {
        let done = timed(6);
        for (l, o) in criterion_6() {
            report(&l, o);
        }
        done();
    }
    if wanted(7) {
        for (l, o) in criterion_7() {
            report(&l, o);
        }
    }
    if wanted(8) {
        for (l, o) in criterion_8() {
            report(&l, o);
        }
    }
    if wanted(9) {
        report("9 shortcut vs estimator", criterion_9());
    }
    if wanted(10) {
        report("10 determinism", criterion_10());
    }

    if failures > 0 {
        println!("{failures} criterion check(s) failed");
        std::process::exit(1);
    }
    println!("all criterion checks passed");
}
