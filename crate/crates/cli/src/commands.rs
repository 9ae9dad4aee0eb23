use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use phasenoise::bounds::{
    alpha_grid, duality_sweep_point, fit_prelog, gaussian_input_mi_lower, mutual_information_estimate,
    prelog_prediction, BoundReport, BoundRow, FitPoint, Model,
};
use phasenoise::channel::{
    apply_channel, complex_normal, generate_generic_matrix, sample_inputs, stream_rng, CMatrix, ChannelRealization,
    InputLaw,
};
use phasenoise::recovery::{
    amplitude_error, analytic_jacobian, perturb_observations, random_instance, recover_amplitudes, RecoveryProblem,
    RecoveryStatus,
};

use crate::config::{ExperimentConfig, InputScheme, Summary};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn channel(cfg: &ExperimentConfig) -> Result<ChannelRealization> {
    Ok(generate_generic_matrix(cfg.n_r, cfg.n_t, cfg.channel_seed())?)
}

fn write_channel(ch: &ChannelRealization, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["i", "k", "re", "im"])?;
    for i in 0..ch.n_r {
        for k in 0..ch.n_t {
            let v = ch.h[(i, k)];
            w.write_record([i.to_string(), k.to_string(), v.re.to_string(), v.im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One CSV of samples per SNR point plus the channel matrix.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    cfg.require_snr()?;
    fs::create_dir_all(out)?;
    let ch = channel(cfg)?;
    let spec = cfg.spec()?;
    let law = cfg.input_law()?;
    write_channel(&ch, &out.join("channel.csv"))?;
    let batches = cfg
        .powers()
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| {
            let seed = cfg.point_seed(idx);
            let x = sample_inputs(&law, ch.n_t, p, cfg.estimator.n_samples, seed)?;
            Ok(apply_channel(&ch, &spec, &x, p, seed.wrapping_add(1))?)
        })
        .collect::<Result<Vec<_>>>()?;
    for (idx, batch) in batches.iter().enumerate() {
        let name = format!("{}_{idx:02}_{}dB.csv", cfg.output.samples_prefix, cfg.snr_db[idx]);
        batch.write_csv(create(&out.join(&name))?)?;
        println!("wrote {} ({} rows)", out.join(&name).display(), batch.len());
    }
    Ok(true)
}

fn lower_bound(
    cfg: &ExperimentConfig,
    ch: &ChannelRealization,
    law: &InputLaw,
    power: f64,
    seed: u64,
) -> Result<phasenoise::entropy::EntropyEstimate> {
    let spec = cfg.spec()?;
    let est = cfg.estimator_config(seed);
    let gaussian = matches!(cfg.input, InputScheme::Gaussian { .. });
    if gaussian && cfg.model != Model::A {
        let active = match law {
            InputLaw::Gaussian { active } => Some(*active),
            _ => None,
        };
        Ok(gaussian_input_mi_lower(ch, &spec, power, active, cfg.inversion, &est)?)
    } else {
        Ok(mutual_information_estimate(ch, &spec, law, power, &est)?)
    }
}

fn sweep_row(cfg: &ExperimentConfig, ch: &ChannelRealization, law: &InputLaw, idx: usize, power: f64) -> BoundRow {
    let seed = cfg.point_seed(idx);
    let attempt = || -> Result<BoundRow> {
        if cfg.duality_enabled() {
            let alphas = alpha_grid(&cfg.alpha_grid, cfg.n_r);
            let (rows, best) = duality_sweep_point(ch, &cfg.spec()?, law, &alphas, power, &cfg.estimator_config(seed))?;
            Ok(rows.into_iter().nth(best).expect("best index in range"))
        } else {
            let e = lower_bound(cfg, ch, law, power, seed)?;
            let mut row = BoundRow::empty(cfg.model, cfg.n_t, cfg.n_r, power);
            row.mi_lower = Some(e.value);
            row.se_mi_lower = Some(e.std_err);
            Ok(row)
        }
    };
    attempt().unwrap_or_else(|e| {
        let mut row = BoundRow::empty(cfg.model, cfg.n_t, cfg.n_r, power);
        row.failure = Some(format!("{e:#}"));
        row
    })
}

/// Bounds over the SNR grid, `bounds.csv` and `summary.json`.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    cfg.require_snr()?;
    fs::create_dir_all(out)?;
    let ch = channel(cfg)?;
    let law = cfg.input_law()?;
    let powers = cfg.powers();
    let rows: Vec<BoundRow> =
        powers.par_iter().enumerate().map(|(idx, &p)| sweep_row(cfg, &ch, &law, idx, p)).collect();
    let points: Vec<FitPoint> = rows
        .iter()
        .filter_map(|r| {
            Some(FitPoint { log2_p: r.power.log2(), value: r.mi_lower?, std_err: r.se_mi_lower.unwrap_or(0.0) })
        })
        .collect();
    let prelog_fit = fit_prelog(&points).ok();
    let report = BoundReport { rows };
    report.write_csv(create(&out.join(&cfg.output.bounds_csv))?)?;
    let summary = Summary { config_hash: cfg.hash(), config: cfg.clone(), rows: report.rows, prelog_fit };
    let mut w = create(&out.join(&cfg.output.summary_json))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    let pred = prelog_prediction(cfg.model, cfg.n_t, cfg.n_r);
    for r in &summary.rows {
        match &r.failure {
            Some(f) => println!("P = {:.4e}: FAILED: {f}", r.power),
            None => println!(
                "P = {:.4e}: mi_lower = {}  mi_upper = {}",
                r.power,
                fmt_opt(r.mi_lower, r.se_mi_lower),
                fmt_opt(r.mi_upper, r.se_mi_upper)
            ),
        }
    }
    match &summary.prelog_fit {
        Some(f) => println!("pre-log fit: slope {:.3} (r2 {:.4}); predicted [{}, {}]", f.slope, f.r2, pred.lower, pred.upper),
        None => println!("pre-log fit: needs at least 3 successful points"),
    }
    Ok(summary.rows.iter().all(|r| !r.failed()))
}

fn fmt_opt(v: Option<f64>, se: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3} ± {:.3}", se.unwrap_or(0.0)),
        None => "-".into(),
    }
}

pub fn predict(model: Model, n_t: usize, n_r: usize) -> Result<bool> {
    anyhow::ensure!(n_t >= 1 && n_r >= 1, "n_t and n_r must be at least 1");
    let p = prelog_prediction(model, n_t, n_r);
    println!("model {model}, n_t = {n_t}, n_r = {n_r}: lower {}, upper {}, tight {}", p.lower, p.upper, p.tight);
    Ok(true)
}

#[derive(Serialize)]
struct TrialRow {
    n_t: usize,
    n_r: usize,
    trial: usize,
    status: RecoveryStatus,
    residual: f64,
    amp_rel_err: f64,
}

#[derive(Serialize)]
struct RecoverySummaryRow {
    n_t: usize,
    n_r: usize,
    trials: usize,
    success_rate: f64,
    ambiguity_rate: f64,
    failure_rate: f64,
}

/// Success means the returned amplitudes are within this relative error.
const RECOVERY_SUCCESS: f64 = 1e-6;

/// Recovery trials at the configured `(n_t, n_r)`.
pub fn recover(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    fs::create_dir_all(out)?;
    let rs = &cfg.recovery;
    let rows = (0..rs.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = cfg.seed.wrapping_add(trial as u64);
            let (prob, a, _) = random_instance(cfg.n_t, cfg.n_r, seed)?;
            let prob = if rs.perturbation > 0.0 {
                RecoveryProblem::new(prob.h, perturb_observations(&prob.s, rs.perturbation, seed))?
            } else {
                prob
            };
            let r = recover_amplitudes(&prob, rs.max_starts, rs.tol, seed);
            Ok(TrialRow {
                n_t: cfg.n_t,
                n_r: cfg.n_r,
                trial,
                status: r.status,
                residual: r.residual,
                amp_rel_err: amplitude_error(&r.amplitudes, &a),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(create(&out.join(&cfg.output.recovery_csv))?);
    if rows.is_empty() {
        w.write_record(["n_t", "n_r", "trial", "status", "residual", "amp_rel_err"])?;
    }
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let n = rows.len().max(1) as f64;
    let count = |f: &dyn Fn(&TrialRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let summary = RecoverySummaryRow {
        n_t: cfg.n_t,
        n_r: cfg.n_r,
        trials: rows.len(),
        success_rate: count(&|r| r.amp_rel_err <= RECOVERY_SUCCESS),
        ambiguity_rate: count(&|r| r.status == RecoveryStatus::Ambiguous),
        failure_rate: count(&|r| r.status == RecoveryStatus::Failed),
    };
    let mut w = csv::Writer::from_writer(create(&out.join(&cfg.output.recovery_summary_csv))?);
    w.serialize(&summary)?;
    w.flush()?;
    println!(
        "{} trials at n_t = {}, n_r = {}: success {:.2}, ambiguous {:.2}, failed {:.2}",
        summary.trials, summary.n_t, summary.n_r, summary.success_rate, summary.ambiguity_rate, summary.failure_rate
    );
    Ok(rows.iter().all(|r| r.status != RecoveryStatus::Failed))
}

/// Quick checks of the library against closed forms.
pub fn selftest() -> bool {
    use phasenoise::entropy::{knn_entropy, PointSet};
    use phasenoise::mathfn::{expected_log_chi2, expected_log_chi2_central, log_sin_lower_bound, EULER_GAMMA};

    type Check = Box<dyn Fn() -> Result<bool>>;
    let checks: Vec<(&str, Check)> = vec![
        (
            "pre-log examples",
            Box::new(|| {
                let p = |m, t, r| prelog_prediction(m, t, r);
                Ok(p(Model::A, 4, 4).upper == 0.5
                    && p(Model::B1, 3, 3).lower == 1.0
                    && !p(Model::B1, 4, 5).tight
                    && p(Model::Common, 2, 2).lower == 1.5)
            }),
        ),
        (
            "chi-square log moment, k = 2",
            Box::new(|| {
                let v = expected_log_chi2_central(2)?;
                let closed = (2f64.ln() - EULER_GAMMA) / 2f64.ln();
                let s = expected_log_chi2(2, 0.0, 1e-12)?;
                Ok((v - closed).abs() < 1e-12 && (s.value - closed).abs() < 1e-10)
            }),
        ),
        (
            "log|sin| bound, uniform phase",
            Box::new(|| {
                let h = (2.0 * std::f64::consts::PI).log2();
                Ok((1..10).all(|a| log_sin_lower_bound(h, a as f64 / 10.0).map(|b| b < -1.0).unwrap_or(false)))
            }),
        ),
        (
            "kNN entropy, 2-D Gaussian",
            Box::new(|| {
                let e = knn_entropy(&PointSet::new(2, normal_points(40_000))?, 4)?;
                let truth = (2.0 * std::f64::consts::PI * std::f64::consts::E).log2();
                Ok((e.value - truth).abs() < 0.05)
            }),
        ),
        (
            "Jacobian of the magnitude map",
            Box::new(|| {
                let (prob, _, _) = random_instance(2, 3, 1)?;
                let mut rng = stream_rng(98, 0);
                let x = CMatrix::from_fn(2, 1, |_, _| complex_normal(&mut rng, 1.0));
                let y = &prob.h * x;
                let j = analytic_jacobian(&prob.h, &[y[0], y[2]])?;
                Ok(j.abs_det > 0.0 && (j.jacobian.determinant().abs() / j.abs_det - 1.0).abs() < 1e-9)
            }),
        ),
        (
            "single-antenna recovery",
            Box::new(|| {
                let (prob, a, _) = random_instance(1, 3, 2)?;
                let r = recover_amplitudes(&prob, 1, 1e-10, 0);
                Ok(r.status == RecoveryStatus::Recovered && amplitude_error(&r.amplitudes, &a) < 1e-12)
            }),
        ),
    ];
    let mut ok = true;
    for (name, check) in checks {
        let pass = matches!(check(), Ok(true));
        println!("{} {name}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    }
    ok
}

/// `n` draws of a standard 2-D Gaussian, flattened.
fn normal_points(n: usize) -> Vec<f64> {
    let mut rng = stream_rng(99, 0);
    (0..n).flat_map(|_| {
        let c = complex_normal(&mut rng, 2.0);
        [c.re, c.im]
    })
    .collect()
}
