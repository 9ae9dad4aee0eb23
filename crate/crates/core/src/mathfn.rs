//! Special functions and scalar moments.
//!
//! Everything public returns bits; arithmetic is done in nats and converted
//! once on the way out. The gamma-family primitives are thin wrappers over
//! `statrs` that add domain checks.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SERIES_TERM_CAP: usize = 1_000_000;

#[inline]
pub fn nats_to_bits(x: f64) -> f64 {
    x / LN_2
}

#[inline]
pub fn bits_to_nats(x: f64) -> f64 {
    x * LN_2
}

/// How a [`LogMoment`] was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    Series,
    Quadrature,
    MonteCarlo,
}

/// An expected logarithm in bits, with the error it was computed to.
///
/// For series and quadrature results `abs_tol` is a bound on the truncation
/// error; for Monte-Carlo results it is one standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogMoment {
    pub value: f64,
    pub method: MomentMethod,
    pub abs_tol: f64,
}

/// `max(log2 x, 0)`.
pub fn log_plus(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return domain(format!("log_plus needs x > 0, got {x}"));
    }
    Ok(x.log2().max(0.0))
}

pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("log_gamma needs a positive finite argument, got {x}"));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("digamma needs a positive finite argument, got {x}"));
    }
    Ok(statrs::function::gamma::digamma(x))
}

/// `B(x, y) = Γ(x)Γ(y)/Γ(x+y)`.
pub fn beta_function(x: f64, y: f64) -> Result<f64> {
    Ok(ln_beta(x, y)?.exp())
}

pub fn ln_beta(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return domain(format!("beta needs positive arguments, got ({x}, {y})"));
    }
    Ok(statrs::function::beta::ln_beta(x, y))
}

/// `ln I0(x)` for `x >= 0`, accurate to about 1e-13 relative.
///
/// Power series below 30, Hankel asymptotic expansion above.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < 30.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum.ln()
    } else {
        // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
        let inv = 1.0 / (8.0 * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..16 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) * inv / kf;
            sum += term;
            if term < 1e-17 {
                break;
            }
        }
        x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
    }
}

/// Central value `f_k(0) = E[log2 X]`, `X ~ chi2_k`, in bits.
pub fn expected_log_chi2_central(k: u32) -> Result<f64> {
    if k == 0 {
        return domain("chi-square needs k >= 1");
    }
    Ok(nats_to_bits(digamma(0.5 * f64::from(k))? + LN_2))
}

/// `f_k(λ) = E[log2 X]` for a noncentral chi-square `X ~ chi2_k(λ)`.
///
/// Evaluated as the Poisson(λ/2) mixture of central values. The series is
/// truncated once `T · log2(k + 2(λ/2 + L + 1))` drops below `tol`, where `T`
/// is the Poisson tail mass beyond the last included index `L`. That quantity
/// bounds the neglected terms because `f_j(0) < log2 j`.
pub fn expected_log_chi2(k: u32, lambda: f64, tol: f64) -> Result<LogMoment> {
    if k == 0 {
        return domain("chi-square needs k >= 1");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return domain(format!("noncentrality must be finite and >= 0, got {lambda}"));
    }
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let m = 0.5 * lambda;
    let half_k = 0.5 * f64::from(k);
    let ln_m = if m > 0.0 { m.ln() } else { f64::NEG_INFINITY };

    // psi(k/2 + l) advanced with psi(x + 1) = psi(x) + 1/x.
    let mut psi = digamma(half_k)?;
    let mut sum = 0.0;
    for l in 0..SERIES_TERM_CAP {
        let lf = l as f64;
        let ln_w = if m > 0.0 {
            -m + lf * ln_m - statrs::function::gamma::ln_gamma(lf + 1.0)
        } else if l == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        sum += ln_w.exp() * (psi + LN_2);
        psi += 1.0 / (half_k + lf);

        let tail = if m > 0.0 {
            statrs::function::gamma::gamma_lr(lf + 1.0, m)
        } else {
            0.0
        };
        let bound = tail * (f64::from(k) + 2.0 * (m + lf + 1.0)).log2();
        if bound < tol {
            let value = nats_to_bits(sum);
            return Ok(LogMoment {
                value,
                method: MomentMethod::Series,
                abs_tol: bound + 8.0 * f64::EPSILON * (1.0 + value.abs()),
            });
        }
    }
    Err(Error::Estimation {
        partial: nats_to_bits(sum),
        iterations: SERIES_TERM_CAP,
    })
}

/// Source of phase samples in `[0, 2π)`.
pub trait PhaseSampler {
    fn sample_phase(&mut self) -> f64;
}

impl<F: FnMut() -> f64> PhaseSampler for F {
    fn sample_phase(&mut self) -> f64 {
        self()
    }
}

/// Uniform phase on `[0, 2π)`.
pub struct UniformPhase<R>(pub R);

impl<R: Rng> PhaseSampler for UniformPhase<R> {
    fn sample_phase(&mut self) -> f64 {
        self.0.random::<f64>() * 2.0 * PI
    }
}

/// Normal phase with the given mean and variance, reduced modulo 2π.
pub struct WrappedNormalPhase<R> {
    rng: R,
    normal: Normal<f64>,
}

impl<R: Rng> WrappedNormalPhase<R> {
    pub fn new(rng: R, mean: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return domain(format!("wrapped normal needs sigma2 > 0, got {sigma2}"));
        }
        let normal = Normal::new(mean, sigma2.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self { rng, normal })
    }
}

impl<R: Rng> PhaseSampler for WrappedNormalPhase<R> {
    fn sample_phase(&mut self) -> f64 {
        self.normal.sample(&mut self.rng).rem_euclid(2.0 * PI)
    }
}

/// Monte-Carlo estimate of `E[log2 |sin Θ|]`.
pub fn log_abs_sin_moment<S: PhaseSampler + ?Sized>(sampler: &mut S, n: usize) -> Result<LogMoment> {
    if n < 2 {
        return domain("need at least two samples");
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let v = sampler.sample_phase().sin().abs().max(f64::MIN_POSITIVE).log2();
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let se = (m2 / ((n - 1) as f64) / n as f64).sqrt();
    Ok(LogMoment {
        value: mean,
        method: MomentMethod::MonteCarlo,
        abs_tol: se.max(f64::EPSILON * (1.0 + mean.abs())),
    })
}

/// Lower bound on `E[log2 |sin Θ|]` given the phase entropy `h_theta` in bits.
///
/// Comes from comparing the phase law with `q(θ) ∝ |sin θ|^{-α}`, whose
/// normalizer over `[0, 2π)` is `2·B((1-α)/2, 1/2)`.
pub fn log_sin_lower_bound(h_theta: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let norm = 1.0 + nats_to_bits(ln_beta(0.5 * (1.0 - alpha), 0.5)?);
    Ok((h_theta - norm) / alpha)
}

/// Differential entropy in bits of a normal law with variance `sigma2` wrapped onto the circle.
///
/// Periodic trapezoid rule on the wrapped density, which converges
/// geometrically for this smooth integrand.
pub fn wrapped_normal_entropy(sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return domain(format!("sigma2 must be positive, got {sigma2}"));
    }
    let sigma = sigma2.sqrt();
    let two_pi = 2.0 * PI;
    if sigma < 0.05 {
        // The wrapped images carry less than e^-1900 of the mass.
        return Ok(0.5 * (two_pi * std::f64::consts::E * sigma2).log2());
    }
    let n = 8192usize.max((64.0 * two_pi / sigma) as usize);
    let images = (8.0 * sigma / two_pi).ceil() as i64 + 2;
    let norm = 1.0 / (sigma * two_pi.sqrt());
    let dx = two_pi / n as f64;
    let mut h = 0.0;
    for i in 0..n {
        let x = i as f64 * dx - PI;
        let mut p = 0.0;
        for j in -images..=images {
            let z = (x + two_pi * j as f64) / sigma;
            p += (-0.5 * z * z).exp();
        }
        p *= norm;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(nats_to_bits(h * dx))
}
