//! Magnitude-only amplitude recovery.
//!
//! Observations are `s_k = |Σ_j h_kj a_j e^{jθ_j}|²` with `θ_1 = 0`. With
//! `n_r = 2n_t - 1` the number of real equations equals the number of
//! unknowns; the solver here checks numerically how often the amplitudes are
//! pinned down.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_generic_matrix, stream_rng, CMatrix};
use crate::error::{Error, Result};

/// Two converged solutions whose amplitudes differ by more than this
/// (relative) are considered distinct.
pub const DISTINCT_SEPARATION: f64 = 1e-4;

/// Residual threshold used by [`find_second_preimage`].
pub const PREIMAGE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryProblem {
    pub h: CMatrix,
    /// Observed squared magnitudes, one per receive antenna.
    pub s: Vec<f64>,
    pub n_t: usize,
    pub n_r: usize,
}

impl RecoveryProblem {
    pub fn new(h: CMatrix, s: Vec<f64>) -> Result<Self> {
        if s.len() != h.nrows() {
            return Err(Error::Dimension(format!("{} observations for {} rows", s.len(), h.nrows())));
        }
        if h.ncols() == 0 || h.nrows() == 0 {
            return Err(Error::Dimension("empty channel matrix".into()));
        }
        if s.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("observations must be nonnegative".into()));
        }
        Ok(Self { n_t: h.ncols(), n_r: h.nrows(), h, s })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Recovered,
    Ambiguous,
    Failed,
}

impl std::fmt::Display for RecoveryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecoveryStatus::Recovered => "recovered",
            RecoveryStatus::Ambiguous => "ambiguous",
            RecoveryStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub amplitudes: Vec<f64>,
    /// `θ_2, …, θ_{n_t}` in `[0, 2π)`.
    pub rel_phases: Vec<f64>,
    /// `‖forward(a, θ) - s‖ / ‖s‖` (absolute when `s = 0`).
    pub residual: f64,
    pub n_starts_used: usize,
    pub status: RecoveryStatus,
}

fn check_shapes(h: &CMatrix, a: &[f64], theta: &[f64]) -> Result<()> {
    if a.len() != h.ncols() || theta.len() + 1 != h.ncols() {
        return Err(Error::Dimension(format!(
            "{} amplitudes and {} phases for {} inputs",
            a.len(),
            theta.len(),
            h.ncols()
        )));
    }
    Ok(())
}

fn transmit(a: &[f64], theta: &[f64]) -> DVector<Complex64> {
    DVector::from_fn(a.len(), |j, _| {
        let phase = if j == 0 { 0.0 } else { theta[j - 1] };
        Complex64::from_polar(a[j], phase)
    })
}

/// `s_k = |h_kᵀ (a ∘ e^{jθ})|²`.
pub fn forward_magnitudes(h: &CMatrix, a: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    check_shapes(h, a, theta)?;
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("amplitudes must be nonnegative".into()));
    }
    Ok((h * transmit(a, theta)).iter().map(|y| y.norm_sqr()).collect())
}

/// Relative amplitude error `‖a' - a‖ / ‖a‖`.
pub fn amplitude_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Local solution from one start, in the normalized problem.
#[derive(Clone, Debug)]
struct Local {
    a: Vec<f64>,
    theta: Vec<f64>,
    residual: f64,
}

/// Residuals and Jacobian of `f(u, θ) - s` with `a = u²`.
fn residual_jacobian(h: &CMatrix, s: &[f64], params: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = h.ncols();
    let n = h.nrows();
    let u = &params[..m];
    let theta = &params[m..];
    let a: Vec<f64> = u.iter().map(|v| v * v).collect();
    let x = transmit(&a, theta);
    let y = h * &x;
    let r = DVector::from_fn(n, |k, _| y[k].norm_sqr() - s[k]);
    let mut jac = DMatrix::zeros(n, 2 * m - 1);
    for k in 0..n {
        let yc = y[k].conj();
        for j in 0..m {
            let hx = h[(k, j)] * x[j];
            // d|y|² = 2 Re(ȳ dy), dy = h_kj e^{jθ_j} da_j + h_kj x_j j dθ_j.
            if a[j] > 0.0 {
                jac[(k, j)] = 2.0 * (yc * hx).re * 2.0 / u[j];
            } else {
                let unit = h[(k, j)] * transmit_unit(j, theta);
                jac[(k, j)] = 2.0 * (yc * unit).re * 2.0 * u[j];
            }
            if j > 0 {
                jac[(k, m + j - 1)] = -2.0 * (yc * hx).im;
            }
        }
    }
    (r, jac)
}

fn transmit_unit(j: usize, theta: &[f64]) -> Complex64 {
    if j == 0 {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::from_polar(1.0, theta[j - 1])
    }
}

/// Levenberg–Marquardt from one start.
fn levenberg_marquardt(h: &CMatrix, s: &[f64], start: Vec<f64>) -> Local {
    let m = h.ncols();
    let dim = start.len();
    let mut p = start;
    let (mut r, mut jac) = residual_jacobian(h, s, &p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..400 {
        if cost < 1e-30 {
            break;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &r;
        let mut damped = jtj.clone();
        for i in 0..dim {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-&g)) else {
            lambda *= 10.0;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        let (r2, j2) = residual_jacobian(h, s, &trial);
        let c2 = r2.norm_squared();
        if c2 < cost {
            let small = step.norm() <= 1e-15 * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
            p = trial;
            r = r2;
            jac = j2;
            cost = c2;
            lambda = (lambda / 3.0).max(1e-15);
            if small {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    let a = p[..m].iter().map(|u| u * u).collect();
    let theta = p[m..].iter().map(|t| t.rem_euclid(2.0 * std::f64::consts::PI)).collect();
    Local { a, theta, residual: cost.sqrt() }
}

/// Upper bound on the amplitude norm used to place starts.
fn amplitude_bound(h: &CMatrix, s: &[f64]) -> f64 {
    let energy: f64 = s.iter().sum();
    let sv = h.clone().singular_values();
    let smin = sv.min();
    let scale = if h.nrows() >= h.ncols() && smin > 1e-8 {
        smin
    } else {
        h.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min)
    };
    (energy.sqrt() / scale).max(1e-12)
}

fn random_start(rng: &mut ChaCha8Rng, m: usize, a_max: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..m).map(|_| (rng.random::<f64>() * a_max).sqrt()).collect();
    p.extend((1..m).map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI));
    p
}

/// All local solutions from `max_starts` seeded starts, on the problem
/// normalized to unit mean observation. Amplitudes are rescaled back.
fn multi_start(prob: &RecoveryProblem, max_starts: usize, seed: u64) -> Vec<Local> {
    let mean_s = prob.s.iter().sum::<f64>() / prob.n_r as f64;
    let norm = if mean_s > 0.0 { mean_s } else { 1.0 };
    let s: Vec<f64> = prob.s.iter().map(|v| v / norm).collect();
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let a_max = amplitude_bound(&prob.h, &s);
    (0..max_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut local = levenberg_marquardt(&prob.h, &s, random_start(&mut rng, prob.n_t, a_max));
            local.residual /= if s_norm > 0.0 { s_norm } else { 1.0 };
            for a in &mut local.a {
                *a *= norm.sqrt();
            }
            local
        })
        .collect()
}

fn closed_form_single(prob: &RecoveryProblem, tol: f64) -> RecoveryResult {
    let num: f64 = prob.h.column(0).iter().zip(&prob.s).map(|(h, s)| h.norm_sqr() * s).sum();
    let den: f64 = prob.h.column(0).iter().map(|h| h.norm_sqr().powi(2)).sum();
    let a = (num / den).max(0.0).sqrt();
    let fitted: Vec<f64> = prob.h.column(0).iter().map(|h| h.norm_sqr() * a * a).collect();
    let residual = relative_residual(&fitted, &prob.s);
    let status = if residual < tol { RecoveryStatus::Recovered } else { RecoveryStatus::Failed };
    RecoveryResult { amplitudes: vec![a], rel_phases: Vec::new(), residual, n_starts_used: 1, status }
}

fn relative_residual(fitted: &[f64], s: &[f64]) -> f64 {
    let num = fitted.iter().zip(s).map(|(f, s)| (f - s).powi(2)).sum::<f64>().sqrt();
    let den = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Multi-start damped least squares with `a = u²`.
///
/// `status` is `ambiguous` when converged starts disagree on the amplitudes
/// by more than [`DISTINCT_SEPARATION`]; the lowest-residual solution is
/// returned either way.
pub fn recover_amplitudes(prob: &RecoveryProblem, max_starts: usize, tol: f64, seed: u64) -> RecoveryResult {
    if prob.n_t == 1 {
        return closed_form_single(prob, tol);
    }
    let locals = multi_start(prob, max_starts.max(1), seed);
    let best = locals
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| x.residual.total_cmp(&y.residual))
        .map(|(i, l)| (i, l.clone()))
        .expect("at least one start");
    let (best_idx, best) = best;
    let converged: Vec<&Local> = locals.iter().filter(|l| l.residual < tol).collect();
    let status = if converged.is_empty() {
        RecoveryStatus::Failed
    } else if converged.iter().any(|l| amplitude_error(&l.a, &best.a) > DISTINCT_SEPARATION) {
        RecoveryStatus::Ambiguous
    } else {
        RecoveryStatus::Recovered
    };
    let first = locals
        .iter()
        .position(|l| l.residual < tol && amplitude_error(&l.a, &best.a) <= DISTINCT_SEPARATION)
        .unwrap_or(best_idx);
    RecoveryResult {
        amplitudes: best.a,
        rel_phases: best.theta,
        residual: best.residual,
        n_starts_used: first + 1,
        status,
    }
}

/// As [`recover_amplitudes`] with the phase reference on antenna `reference`.
/// The returned phases are re-expressed relative to antenna 1.
pub fn recover_amplitudes_with_reference(
    prob: &RecoveryProblem,
    reference: usize,
    max_starts: usize,
    tol: f64,
    seed: u64,
) -> Result<RecoveryResult> {
    if reference >= prob.n_t {
        return Err(Error::Dimension(format!("reference {reference} out of range")));
    }
    let mut order: Vec<usize> = (0..prob.n_t).collect();
    order.swap(0, reference);
    let h = CMatrix::from_fn(prob.n_r, prob.n_t, |i, k| prob.h[(i, order[k])]);
    let permuted = RecoveryProblem::new(h, prob.s.clone())?;
    let r = recover_amplitudes(&permuted, max_starts, tol, seed);
    let mut a = vec![0.0; prob.n_t];
    let mut phase = vec![0.0; prob.n_t];
    for k in 0..prob.n_t {
        a[order[k]] = r.amplitudes[k];
        phase[order[k]] = if k == 0 { 0.0 } else { r.rel_phases[k - 1] };
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let rel_phases = (1..prob.n_t).map(|k| (phase[k] - phase[0]).rem_euclid(two_pi)).collect();
    Ok(RecoveryResult { amplitudes: a, rel_phases, ..r })
}

/// Search for a solution with residual below [`PREIMAGE_TOL`] whose
/// amplitudes differ from `reference` by more than `separation` (relative).
pub fn find_second_preimage(
    prob: &RecoveryProblem,
    reference: (&[f64], &[f64]),
    separation: f64,
    max_starts: usize,
    seed: u64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    if prob.n_t == 1 {
        return None;
    }
    multi_start(prob, max_starts.max(1), seed)
        .into_iter()
        .filter(|l| l.residual < PREIMAGE_TOL && amplitude_error(&l.a, reference.0) > separation)
        .min_by(|x, y| x.residual.total_cmp(&y.residual))
        .map(|l| (l.a, l.theta))
}

/// Random noiseless instance with amplitudes in `(0, 1)` and uniform phases.
pub fn random_instance(n_t: usize, n_r: usize, seed: u64) -> Result<(RecoveryProblem, Vec<f64>, Vec<f64>)> {
    let ch = generate_generic_matrix(n_r, n_t, seed)?;
    let mut rng = stream_rng(seed, 7);
    let a: Vec<f64> = (0..n_t).map(|_| rng.random::<f64>()).collect();
    let theta: Vec<f64> = (1..n_t).map(|_| rng.random::<f64>() * 2.0 * std::f64::consts::PI).collect();
    let s = forward_magnitudes(&ch.h, &a, &theta)?;
    Ok((RecoveryProblem::new(ch.h, s)?, a, theta))
}

/// Observations with independent uniform perturbations in `[-bound, bound]`,
/// clipped at zero.
pub fn perturb_observations(s: &[f64], bound: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 11);
    s.iter().map(|v| (v + bound * (2.0 * rng.random::<f64>() - 1.0)).max(0.0)).collect()
}

/// Jacobian of the magnitude map on the basis rows and its absolute determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianResult {
    /// `∂(|ŷ_1|², …, |ŷ_{n_r-1}|²) / ∂(Re ŷ^{n_t-1}, Im ŷ^{n_t-1})`.
    pub jacobian: DMatrix<f64>,
    /// `4^{n_t-1} |det Im{diag(ŷ_{n_t}^{n_r-1}) B* diag(ŷ^{n_t-1})*}|`.
    pub abs_det: f64,
    pub b_matrix: CMatrix,
    pub b_vector: DVector<Complex64>,
}

/// `B`, `b` with rows `n_t..n_r-1` of `h` equal to `[B b]` times the basis rows.
pub fn basis_coefficients(h: &CMatrix) -> Result<(CMatrix, DVector<Complex64>)> {
    let (n, m) = h.shape();
    if n != 2 * m - 1 {
        return Err(Error::Dimension(format!("need n_r = 2 n_t - 1, got {n} x {m}")));
    }
    let mut basis_rows: Vec<usize> = (0..m - 1).collect();
    basis_rows.push(n - 1);
    let basis = h.select_rows(&basis_rows);
    let sv = basis.clone().singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::RankDeficient("basis rows are linearly dependent".into()));
    }
    let rest = h.rows(m - 1, m - 1).into_owned();
    let inv = basis.try_inverse().ok_or_else(|| Error::RankDeficient("basis rows".into()))?;
    let coeff = rest * inv;
    let b_matrix = coeff.columns(0, m - 1).into_owned();
    let b_vector = coeff.column(m - 1).into_owned();
    Ok((b_matrix, b_vector))
}

/// Analytic Jacobian of the magnitudes with `ŷ_{n_r}` held fixed.
///
/// `y_hat` holds `(ŷ_1, …, ŷ_{n_t-1}, ŷ_{n_r})`.
pub fn analytic_jacobian(h: &CMatrix, y_hat: &[Complex64]) -> Result<JacobianResult> {
    let m = h.ncols();
    if y_hat.len() != m {
        return Err(Error::Dimension(format!("{} basis values for {m} inputs", y_hat.len())));
    }
    let (b_matrix, b_vector) = basis_coefficients(h)?;
    let d = m - 1;
    if d == 0 {
        return Ok(JacobianResult { jacobian: DMatrix::zeros(0, 0), abs_det: 1.0, b_matrix, b_vector });
    }
    let head = DVector::from_column_slice(&y_hat[..d]);
    let tail = &b_matrix * &head + &b_vector * y_hat[d];
    let mut jac = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        jac[(i, i)] = 2.0 * head[i].re;
        jac[(i, d + i)] = 2.0 * head[i].im;
        let rc = tail[i].conj();
        for j in 0..d {
            let g = rc * b_matrix[(i, j)];
            jac[(d + i, j)] = 2.0 * g.re;
            jac[(d + i, d + j)] = -2.0 * g.im;
        }
    }
    let core = DMatrix::from_fn(d, d, |i, j| (tail[i] * b_matrix[(i, j)].conj() * head[j].conj()).im);
    let abs_det = 4f64.powi(d as i32) * core.determinant().abs();
    Ok(JacobianResult { jacobian: jac, abs_det, b_matrix, b_vector })
}
