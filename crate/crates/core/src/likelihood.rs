//! Conditional output density `p(y | x)` with the phase noise integrated out.
//!
//! For uniform phase marginals one common phase (or one phase per output)
//! integrates in closed form to a Bessel `I0` factor; what remains is an
//! integral over the relative transmit phases of the active inputs. At high
//! SNR that integrand is sharply peaked, so the circle integral is done by
//! locating every peak on a coarse grid, refining it, and applying
//! Gauss–Legendre on a window scaled to the peak width.
//!
//! Up to two relative phases (three active inputs) are supported.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{CMatrix, PhaseNoiseSpec, PhaseProcess, PhaseStructure};
use crate::entropy::EntropyEstimate;
use crate::error::{Error, Result};
use crate::mathfn::{ln_bessel_i0, nats_to_bits};

const GRID_INNER: usize = 256;
const GRID_OUTER: usize = 96;
const PEAK_FLOOR: f64 = 60.0;
const WINDOW_WIDTHS: f64 = 14.0;
const MAX_RELATIVE_PHASES: usize = 2;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn log_sum_exp(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln( (1/2π) ∫_0^{2π} e^{f(φ)} dφ )`.
fn ln_circle_mean(f: &dyn Fn(f64) -> f64, grid: usize) -> f64 {
    thread_local! {
        static GL: (Vec<f64>, Vec<f64>) = gauss_legendre(48);
    }
    let h = 2.0 * PI / grid as f64;
    let vals: Vec<f64> = (0..grid).map(|i| f(i as f64 * h)).collect();
    let fmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !fmax.is_finite() {
        return fmax;
    }
    let trapezoid = |vals: &[f64]| log_sum_exp(vals.iter().copied()) - (vals.len() as f64).ln();

    let mut windows: Vec<(f64, f64)> = Vec::new();
    for i in 0..grid {
        let (l, r) = (vals[(i + grid - 1) % grid], vals[(i + 1) % grid]);
        if vals[i] < fmax - PEAK_FLOOR || vals[i] < l || vals[i] <= r {
            continue;
        }
        // Golden-section refinement inside the neighbouring grid cells.
        let (mut a, mut b) = ((i as f64 - 1.0) * h, (i as f64 + 1.0) * h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-9 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        let peak = 0.5 * (a + b);
        let fp = f(peak);
        let curvature = |e: f64| (2.0 * fp - f(peak - e) - f(peak + e)) / (e * e);
        let mut c2 = curvature(1e-3);
        if c2 > 0.0 {
            c2 = curvature((0.1 / c2.sqrt()).min(1e-3)).max(c2 * 1e-3);
        }
        let half = if c2 > 0.0 { WINDOW_WIDTHS / c2.sqrt() } else { PI };
        if half >= 6.0 * h || half >= PI {
            // Broad peak: the periodic trapezoid rule at a resolution of a
            // few points per width is spectrally accurate.
            let width = half / WINDOW_WIDTHS;
            let m = ((2.0 * PI / (width / 4.0)).ceil() as usize).clamp(grid, 1 << 16);
            if m == grid {
                return trapezoid(&vals);
            }
            let fine: Vec<f64> = (0..m).map(|j| f(j as f64 * 2.0 * PI / m as f64)).collect();
            return trapezoid(&fine);
        }
        windows.push((peak - half, peak + half));
    }
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }
    // A window wrapping past 2π may overlap the first one.
    if merged.len() > 1 {
        let first = merged[0];
        let last = merged.last_mut().expect("non-empty");
        if last.1 >= first.0 + 2.0 * PI {
            last.1 = last.1.max(first.1 + 2.0 * PI);
            merged.remove(0);
        }
    }
    GL.with(|(x, w)| {
        let mut terms = Vec::new();
        for (lo, hi) in merged {
            let panels = ((hi - lo) / (2.0 * PI / grid as f64 * 3.0)).ceil().max(2.0) as usize;
            let len = (hi - lo) / panels as f64;
            for p in 0..panels {
                let mid = lo + (p as f64 + 0.5) * len;
                for (xi, wi) in x.iter().zip(w) {
                    terms.push(f(mid + 0.5 * len * xi) + (0.5 * len * wi).ln());
                }
            }
        }
        log_sum_exp(terms) - (2.0 * PI).ln()
    })
}

/// `ln` of the mean of `e^{f}` over the torus of dimension `f`'s argument length.
fn ln_torus_mean(f: &dyn Fn(&[f64]) -> f64, dim: usize) -> Result<f64> {
    match dim {
        0 => Ok(f(&[])),
        1 => Ok(ln_circle_mean(&|a| f(&[a]), GRID_INNER)),
        2 => Ok(ln_circle_mean(&|a| ln_circle_mean(&|b| f(&[a, b]), GRID_INNER), GRID_OUTER)),
        _ => Err(Error::Unsupported(format!(
            "{} relative phases to integrate; at most {MAX_RELATIVE_PHASES} are supported",
            dim
        ))),
    }
}

/// `ln p(y | s)` after integrating a common uniform phase: `y = e^{jψ} s + z`.
fn ln_common(s: &[Complex64], y: &[Complex64]) -> f64 {
    let mut inner = Complex64::new(0.0, 0.0);
    let mut ns = 0.0;
    let mut ny = 0.0;
    for (a, b) in s.iter().zip(y) {
        inner += a.conj() * b;
        ns += a.norm_sqr();
        ny += b.norm_sqr();
    }
    -(s.len() as f64) * PI.ln() - ny - ns + ln_bessel_i0(2.0 * inner.norm())
}

/// `ln p(y | s)` with independent uniform phases per component (Rice law).
fn ln_rice(s: &[Complex64], y: &[Complex64]) -> f64 {
    s.iter()
        .zip(y)
        .map(|(a, b)| {
            let (m, r) = (a.norm(), b.norm());
            -PI.ln() - (r - m) * (r - m) + ln_bessel_i0(2.0 * r * m) - 2.0 * r * m
        })
        .sum()
}

fn ln_gaussian(s: &[Complex64], y: &[Complex64]) -> f64 {
    s.iter().zip(y).map(|(a, b)| -PI.ln() - (b - a).norm_sqr()).sum()
}

/// Exact conditional log-density of a phase-noise channel.
#[derive(Clone, Debug)]
pub struct PhaseLikelihood {
    h: CMatrix,
    spec: PhaseNoiseSpec,
}

impl PhaseLikelihood {
    pub fn new(h: &CMatrix, spec: &PhaseNoiseSpec) -> Self {
        Self { h: h.clone(), spec: *spec }
    }

    /// `ln p(y | x)` in nats.
    pub fn log_density(&self, x: &[Complex64], y: &[Complex64]) -> Result<f64> {
        let (n_r, n_t) = self.h.shape();
        if x.len() != n_t || y.len() != n_r {
            return Err(Error::Dimension(format!("expected x of {n_t} and y of {n_r} entries")));
        }
        if let PhaseProcess::Degenerate { value } = self.spec.process {
            let theta = match self.spec.structure {
                PhaseStructure::None => 0.0,
                PhaseStructure::TxRx => 2.0 * value,
                _ => value,
            };
            let s: Vec<Complex64> = (&self.h * nalgebra::DVector::from_column_slice(x))
                .iter()
                .map(|v| v * Complex64::from_polar(1.0, theta))
                .collect();
            return Ok(ln_gaussian(&s, y));
        }
        let active: Vec<usize> = (0..n_t).filter(|&k| x[k].norm() > 0.0).collect();
        let rel = active.len().saturating_sub(1);
        // Output mean for relative phases `phi` on active[1..]; missing
        // entries are zero.
        let mean = |row: usize, phi: &[f64]| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &k) in active.iter().enumerate() {
                let rot = match j.checked_sub(1).and_then(|i| phi.get(i)) {
                    Some(&p) => Complex64::from_polar(1.0, p),
                    None => Complex64::new(1.0, 0.0),
                };
                acc += self.h[(row, k)] * x[k] * rot;
            }
            acc
        };
        let all = |phi: &[f64]| -> Vec<Complex64> { (0..n_r).map(|i| mean(i, phi)).collect() };
        match self.spec.structure {
            PhaseStructure::None => Ok(ln_gaussian(&all(&[]), y)),
            PhaseStructure::Common => Ok(ln_common(&all(&[]), y)),
            PhaseStructure::RxOnly => Ok(ln_rice(&all(&[]), y)),
            PhaseStructure::TxOnly => ln_torus_mean(&|phi| ln_common(&all(phi), y), rel),
            PhaseStructure::TxRx => ln_torus_mean(&|phi| ln_rice(&all(phi), y), rel),
            PhaseStructure::PerPath => {
                let mut total = 0.0;
                for i in 0..n_r {
                    total += ln_torus_mean(&|phi| ln_rice(&[mean(i, phi)], &y[i..=i]), rel)?;
                }
                Ok(total)
            }
        }
    }

    /// `ĥ(Y | X)` in bits as the sample mean of `-log2 p(y_t | x_t)`.
    pub fn conditional_entropy(&self, x: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> Result<EntropyEstimate> {
        let n = x.ncols();
        if n < 2 || y.ncols() != n {
            return Err(Error::Dimension("need at least two matching input/output columns".into()));
        }
        let vals: Vec<Result<f64>> = (0..n)
            .into_par_iter()
            .map(|t| {
                let xs: Vec<Complex64> = x.column(t).iter().copied().collect();
                let ys: Vec<Complex64> = y.column(t).iter().copied().collect();
                self.log_density(&xs, &ys).map(|v| -nats_to_bits(v))
            })
            .collect();
        let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(EntropyEstimate { value: mean, std_err: (var / n as f64).sqrt(), k: 0, n, dim: 2 * y.nrows() })
    }
}
