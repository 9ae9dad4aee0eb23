//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test --release -p phasenoise --test acceptance`.
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use phasenoise::auxdist::AuxGammaParams;
use phasenoise::bounds::*;
use phasenoise::channel::*;
use phasenoise::entropy::{conditional_entropy, knn_entropy, KnnConfig, PointSet};
use phasenoise::mathfn::*;
use phasenoise::recovery::*;

const SNR_GRID: [f64; 4] = [10.0, 14.0, 18.0, 22.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Pre-log values written out independently of the library.
fn reference_prelog(model: Model, n_t: usize, n_r: usize) -> (f64, f64, bool) {
    let t = n_t as f64;
    let r = n_r as f64;
    match model {
        Model::A => (0.5, 0.5, true),
        Model::B1 => {
            let lo = 0.5 * t.min(((n_r + 1) / 2) as f64);
            let up = 0.5 * t.min((r - 2.0).max(0.0) + 1.0);
            (lo, up, n_r <= 3 || n_r + 1 >= 2 * n_t)
        }
        Model::B2 => (0.5 * t.min(r), 0.5 * t.min(r), true),
        Model::B3 => {
            let v = (r / 2.0).min(t - 0.5);
            (v, v, true)
        }
        Model::Common => (t.min(r) - 0.5, t.min(r) - 0.5, true),
    }
}

fn crit1() -> Outcome {
    let mut mismatches = Vec::new();
    for model in Model::ALL {
        for n_t in 1..=6 {
            for n_r in 1..=6 {
                let p = prelog_prediction(model, n_t, n_r);
                let (lo, up, tight) = reference_prelog(model, n_t, n_r);
                if p.lower != lo || p.upper != up || p.tight != tight {
                    mismatches.push(format!("{model}({n_t},{n_r})"));
                }
            }
        }
    }
    outcome(mismatches.is_empty(), format!("180 cases, mismatches: {mismatches:?}"))
}

fn sweep_fit<F>(mut value: F) -> (PrelogFit, Vec<FitPoint>)
where
    F: FnMut(f64) -> (f64, f64),
{
    let points: Vec<FitPoint> = SNR_GRID
        .iter()
        .map(|&l| {
            let (value, std_err) = value(2f64.powf(l));
            FitPoint { log2_p: l, value, std_err }
        })
        .collect();
    (fit_prelog(&points).expect("four points"), points)
}

fn describe(points: &[FitPoint]) -> String {
    points.iter().map(|p| format!("{:.3}±{:.3}", p.value, p.std_err)).collect::<Vec<_>>().join(", ")
}

fn crit2() -> Outcome {
    let ch = generate_generic_matrix(2, 2, 2024).unwrap();
    let spec = PhaseNoiseSpec::iid(PhaseStructure::TxOnly);
    let cfg = EstimatorConfig { n_samples: 200_000, n_likelihood: 20_000, seed: 2, ..Default::default() };
    let (fit, pts) = sweep_fit(|p| {
        let e = gaussian_input_mi_lower(&ch, &spec, p, Some(2), false, &cfg).unwrap();
        (e.value, e.std_err)
    });
    outcome(
        (0.85..=1.15).contains(&fit.slope),
        format!("slope {:.3} (r2 {:.4}), I = [{}]", fit.slope, fit.r2, describe(&pts)),
    )
}

fn crit3() -> Outcome {
    let ch = generate_generic_matrix(3, 2, 2025).unwrap();
    let spec = PhaseNoiseSpec::iid(PhaseStructure::RxOnly);
    let cfg = EstimatorConfig { n_samples: 200_000, seed: 3, ..Default::default() };
    let powers: Vec<f64> = SNR_GRID.iter().map(|l| 2f64.powf(*l)).collect();
    let g = hy_growth_check(&ch, &spec, &powers, &cfg).unwrap();
    outcome(
        (2.75..=3.25).contains(&g.fit.slope),
        format!("slope {:.3} (predicted {}), h(Y) = [{}]", g.fit.slope, g.predicted_slope, describe(&g.points)),
    )
}

fn crit4() -> Outcome {
    let ch = generate_generic_matrix(2, 2, 2026).unwrap();
    let spec = PhaseNoiseSpec::iid(PhaseStructure::PerPath);
    let law = InputLaw::SingleAntennaAmplitude { antenna: 0 };
    let cfg = EstimatorConfig { n_samples: 200_000, n_likelihood: 20_000, seed: 4, ..Default::default() };
    let (fit, pts) = sweep_fit(|p| {
        let e = mutual_information_estimate(&ch, &spec, &law, p, &cfg).unwrap();
        (e.value, e.std_err)
    });
    outcome(
        (0.35..=0.65).contains(&fit.slope),
        format!("slope {:.3} (r2 {:.4}), I = [{}]", fit.slope, fit.r2, describe(&pts)),
    )
}

fn crit5() -> Outcome {
    let alphas = alpha_grid(&[0.05, 0.1, 0.2, 0.4], 2);
    let mut cases = 0;
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for (model, structure) in [(Model::A, PhaseStructure::PerPath), (Model::B1, PhaseStructure::TxRx)] {
        let ch = generate_generic_matrix(2, 2, 55).unwrap();
        let spec = PhaseNoiseSpec::iid(structure);
        for law_seed in 0..20 {
            let law = InputLaw::random(2, 1000 + law_seed);
            for power in [1e2, 1e4] {
                let cfg = EstimatorConfig { n_samples: 20_000, n_likelihood: 200, seed: 5 + law_seed, ..Default::default() };
                let params: Vec<AuxGammaParams> =
                    alphas.iter().map(|a| AuxGammaParams::for_power(a.clone(), power).unwrap()).collect();
                let batch = canonical_batch(&ch, &spec, &law, power, &cfg).unwrap();
                for row in duality_rows(&ch, &spec, &batch, &params, power, &cfg).unwrap() {
                    cases += 1;
                    let sigma = row.se_duality.unwrap().hypot(row.se_hw_given_u.unwrap());
                    let z = (row.duality_term.unwrap() - row.hw_given_u.unwrap()) / sigma;
                    worst = worst.min(z);
                    if z < -3.0 {
                        violations.push(format!("{model} law {law_seed} P {power:e} α {:?}", row.alpha_vec));
                    }
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("{cases} cases, min (E[-log q] - h(W|U))/σ = {worst:.1}, violations: {violations:?}"),
    )
}

fn crit6() -> Outcome {
    let lambdas: Vec<f64> = (0..=20).map(|i| 0.5 * i as f64).collect();
    let vals: Vec<LogMoment> = lambdas.iter().map(|&l| expected_log_chi2(1, l, 1e-12).unwrap()).collect();
    let mut min_ratio = f64::INFINITY;
    for w in vals.windows(2) {
        min_ratio = min_ratio.min((w[1].value - w[0].value) / (3.0 * (w[0].abs_tol + w[1].abs_tol)));
    }
    let n = 10_000_000usize;
    let mut worst_z: f64 = 0.0;
    for (i, (&l, v)) in lambdas.iter().zip(&vals).enumerate() {
        let mut rng = stream_rng(600, i as u64);
        let (mut mean, mut m2) = (0.0, 0.0);
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let x = (z + l.sqrt()).powi(2).log2();
            let d = x - mean;
            mean += d / (j + 1) as f64;
            m2 += d * (x - mean);
        }
        let se = (m2 / (n - 1) as f64 / n as f64).sqrt();
        worst_z = worst_z.max((mean - v.value).abs() / se.hypot(v.abs_tol));
    }
    outcome(
        min_ratio > 1.0 && worst_z <= 3.0,
        format!("min gap/(3 tol) = {min_ratio:.3e}, max |MC - series|/σ = {worst_z:.2}"),
    )
}

fn crit7() -> Outcome {
    let n = 2_000_000;
    let mut worst = f64::INFINITY;
    let mut fails = Vec::new();
    let mut laws: Vec<(String, LogMoment, f64)> = Vec::new();
    let mut u = UniformPhase(stream_rng(700, 0));
    laws.push(("uniform".into(), log_abs_sin_moment(&mut u, n).unwrap(), (2.0 * std::f64::consts::PI).log2()));
    for (i, s2) in [0.1, 1.0].into_iter().enumerate() {
        // Mean π/2 keeps the law away from the zeros of sin; mean 0 is checked too.
        for mean in [0.0, std::f64::consts::FRAC_PI_2] {
            let mut w = WrappedNormalPhase::new(stream_rng(700, 1 + i as u64 * 2 + (mean > 0.0) as u64), mean, s2).unwrap();
            let m = log_abs_sin_moment(&mut w, n).unwrap();
            laws.push((format!("wrapped σ²={s2} mean={mean:.2}"), m, wrapped_normal_entropy(s2).unwrap()));
        }
    }
    for (name, m, h) in &laws {
        for a in 1..=9 {
            let alpha = a as f64 / 10.0;
            let bound = log_sin_lower_bound(*h, alpha).unwrap();
            let margin = m.value - bound;
            worst = worst.min(margin);
            if margin <= 0.0 {
                fails.push(format!("{name} α={alpha}"));
            }
        }
    }
    outcome(fails.is_empty(), format!("min margin {worst:.4} bits, failures: {fails:?}"))
}

fn crit8() -> Outcome {
    let betas: Vec<f64> = (5..=10).map(|e| 2f64.powi(e)).collect();
    let mut points = Vec::new();
    for (i, &beta) in betas.iter().enumerate() {
        let outer = vec![beta; 50];
        let e = conditional_entropy(
            |b: &f64, n, rng| {
                let mut data = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let th = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                    let z = complex_normal(rng, 1.0);
                    let y = Complex64::from_polar(*b, th) + z;
                    data.push(y.re);
                    data.push(y.im);
                }
                PointSet::new(2, data).unwrap()
            },
            &outer,
            100_000,
            4,
            800 + i as u64,
        )
        .unwrap();
        points.push(FitPoint { log2_p: beta.log2(), value: e.value, std_err: e.std_err });
    }
    let fit = fit_prelog_window(&points, points.len()).unwrap();
    let mut mags = Vec::new();
    for (i, beta) in [0.0, 32.0, 1024.0].into_iter().enumerate() {
        let mut rng = stream_rng(810, i as u64);
        let data: Vec<f64> = (0..100_000).map(|_| (Complex64::new(beta, 0.0) + complex_normal(&mut rng, 1.0)).norm()).collect();
        mags.push(knn_entropy(&PointSet::new(1, data).unwrap(), 4).unwrap().value);
    }
    let pass = (0.9..=1.1).contains(&fit.slope) && mags.iter().all(|v| v.abs() <= 3.0);
    outcome(pass, format!("slope {:.3}, h(|β+Z|) at β=0,32,1024: {:.3?}", fit.slope, mags))
}

fn crit9() -> Outcome {
    let trial = |n_t: usize, n_r: usize| -> (usize, usize) {
        let mut ok = 0;
        let mut ambiguous = 0;
        for seed in 0..100 {
            let (prob, a, _) = random_instance(n_t, n_r, 9000 + seed).unwrap();
            let r = recover_amplitudes(&prob, 50, 1e-10, seed);
            ok += (amplitude_error(&r.amplitudes, &a) <= 1e-6) as usize;
            ambiguous += (r.status == RecoveryStatus::Ambiguous) as usize;
        }
        (ok, ambiguous)
    };
    let (ok23, amb23) = trial(2, 3);
    let (ok35, amb35) = trial(3, 5);
    let mut second = 0;
    for seed in 0..100 {
        let (prob, a, th) = random_instance(2, 2, 9500 + seed).unwrap();
        second += find_second_preimage(&prob, (&a, &th), 1e-3, 50, seed).is_some() as usize;
    }
    outcome(
        ok23 >= 95 && ok35 >= 90 && second >= 80,
        format!(
            "(2,3) {ok23}/100 recovered [{amb23} flagged ambiguous], (3,5) {ok35}/100 [{amb35} ambiguous], (2,2) second preimage {second}/100"
        ),
    )
}

fn crit10() -> Outcome {
    let mut worst_entry: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    let mut count = 0;
    for n_t in [2usize, 3] {
        for seed in 0..100 {
            let (prob, _, _) = random_instance(n_t, 2 * n_t - 1, 10_000 + seed).unwrap();
            let mut rng = stream_rng(1010, seed);
            let x: Vec<Complex64> = (0..n_t).map(|_| complex_normal(&mut rng, 1.0)).collect();
            let y = &prob.h * nalgebra::DVector::from_vec(x);
            let mut basis: Vec<Complex64> = y.iter().take(n_t - 1).copied().collect();
            basis.push(y[2 * n_t - 2]);
            let j = analytic_jacobian(&prob.h, &basis).unwrap();
            let fd = finite_difference(&prob.h, &basis);
            let scale = fd.abs().max();
            worst_entry = worst_entry.max((&j.jacobian - &fd).abs().max() / scale);
            worst_det = worst_det.max((j.abs_det / fd.determinant().abs() - 1.0).abs());
            count += 1;
        }
    }
    outcome(
        worst_entry <= 1e-6 && worst_det <= 1e-6,
        format!("{count} instances, max entry error {worst_entry:.2e}, max |det ratio - 1| {worst_det:.2e} (global constant 1)"),
    )
}

/// Central differences of the magnitudes with step 1e-6.
fn finite_difference(h: &CMatrix, y_hat: &[Complex64]) -> nalgebra::DMatrix<f64> {
    let m = h.ncols();
    let d = m - 1;
    let n = h.nrows();
    let mut basis_rows: Vec<usize> = (0..d).collect();
    basis_rows.push(n - 1);
    let inv = h.select_rows(&basis_rows).try_inverse().unwrap();
    let mags = |head: &[Complex64]| -> Vec<f64> {
        let mut v: Vec<Complex64> = head.to_vec();
        v.push(y_hat[d]);
        let x = &inv * nalgebra::DVector::from_vec(v);
        let y = h * x;
        y.iter().take(n - 1).map(|c| c.norm_sqr()).collect()
    };
    let step = 1e-6;
    let mut jac = nalgebra::DMatrix::zeros(2 * d, 2 * d);
    for c in 0..2 * d {
        let delta = if c < d { Complex64::new(step, 0.0) } else { Complex64::new(0.0, step) };
        let mut plus = y_hat[..d].to_vec();
        let mut minus = plus.clone();
        plus[c % d] += delta;
        minus[c % d] -= delta;
        let (fp, fm) = (mags(&plus), mags(&minus));
        for r in 0..2 * d {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    jac
}

fn crit11() -> Outcome {
    let mut errs = Vec::new();
    for d in 2..=6 {
        let mut rng = stream_rng(1100, d as u64);
        let data: Vec<f64> = (0..100_000 * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = knn_entropy(&PointSet::new(d, data).unwrap(), KnnConfig::default().k).unwrap();
        let truth = 0.5 * d as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2();
        errs.push(e.value - truth);
    }
    let pass = errs.iter().all(|e| e.abs() <= 0.05);
    outcome(pass, format!("errors d=2..6: {:.4?} bits", errs))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "pre-log prediction table", crit1),
        (2, "model B2 achievability slope", crit2),
        (3, "h(Y) growth with receive phase noise", crit3),
        (4, "model A achievability slope", crit4),
        (5, "duality certificate", crit5),
        (6, "noncentral chi-square log monotonicity", crit6),
        (7, "log|sin| lower bound", crit7),
        (8, "phase-noisy scalar entropy behavior", crit8),
        (9, "recovery at the counting threshold", crit9),
        (10, "Jacobian determinant", crit10),
        (11, "estimator calibration", crit11),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag}: {name} [{:.1}s] {}", t0.elapsed().as_secs_f64(), out.detail);
        failed += (!out.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
