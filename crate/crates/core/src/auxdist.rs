//! Auxiliary output densities for duality upper bounds.
//!
//! Two circularly-symmetric families on `C^n`:
//!
//! * the order-statistics family, in which the sorted squared magnitudes
//!   `s_1 < ... < s_n` follow the multivariate Gamma law
//!   `g_α μ^{Σα} s_1^{α_1-1} Π (s_i - s_{i-1})^{α_i-1} e^{-μ s_n}`;
//! * the independent family, in which each `|w_i|²` is `Gamma(α_i, μ)`.
//!
//! Both lift squared-magnitude densities to `C^n` with the factor `π^{-n}`,
//! and the order-statistics family divides by `n!` for the unordering, so
//! that each is a proper density. Log-densities are in nats.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::channel::stream_rng;
use crate::error::{domain, Error, Result};
use crate::mathfn::log_gamma;

/// Relative gap inserted between tied squared magnitudes.
const TIE_GAP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxGammaParams {
    pub alphas: Vec<f64>,
    pub mu: f64,
}

impl AuxGammaParams {
    pub fn new(alphas: Vec<f64>, mu: f64) -> Result<Self> {
        if alphas.is_empty() {
            return domain("need at least one exponent");
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return domain(format!("exponents must lie in (0, 1], got {a}"));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return domain(format!("rate must be positive, got {mu}"));
        }
        Ok(Self { alphas, mu })
    }

    /// Rate `min(1/P, 1)`.
    pub fn for_power(alphas: Vec<f64>, power: f64) -> Result<Self> {
        let mu = if power > 1.0 { 1.0 / power } else { 1.0 };
        Self::new(alphas, mu)
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    fn ln_norm(&self) -> f64 {
        self.alphas
            .iter()
            .map(|&a| a * self.mu.ln() - log_gamma(a).expect("validated exponent"))
            .sum()
    }
}

/// Log-density of the multivariate Gamma law at strictly increasing `s`.
pub fn mv_gamma_log_density(s: &[f64], p: &AuxGammaParams) -> Result<f64> {
    if s.len() != p.dim() {
        return Err(Error::Dimension(format!("{} values for {} exponents", s.len(), p.dim())));
    }
    let mut prev = 0.0;
    for &v in s {
        if !(v > prev) {
            return domain("values must be positive and strictly increasing");
        }
        prev = v;
    }
    Ok(mv_gamma_unchecked(s, p))
}

fn mv_gamma_unchecked(s: &[f64], p: &AuxGammaParams) -> f64 {
    let mut acc = p.ln_norm() - p.mu * s[s.len() - 1];
    let mut prev = 0.0;
    for (&v, &a) in s.iter().zip(&p.alphas) {
        if a != 1.0 {
            acc += (a - 1.0) * (v - prev).ln();
        }
        prev = v;
    }
    acc
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Log-density of the order-statistics family at `w`.
pub fn aux_logq_model_a(w: &[Complex64], p: &AuxGammaParams) -> Result<f64> {
    if w.len() != p.dim() {
        return Err(Error::Dimension(format!("{} components for {} exponents", w.len(), p.dim())));
    }
    let mut s: Vec<f64> = w.iter().map(|v| v.norm_sqr()).collect();
    // Stable sort keeps index order for exact ties.
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let mut prev = 0.0f64;
    for v in s.iter_mut() {
        if *v <= prev {
            *v = prev + TIE_GAP * prev.max(f64::MIN_POSITIVE);
        }
        prev = *v;
    }
    let n = w.len();
    Ok(mv_gamma_unchecked(&s, p) - ln_factorial(n) - n as f64 * PI.ln())
}

/// Log-density of the independent family at `w`.
pub fn aux_logq_independent(w: &[Complex64], p: &AuxGammaParams) -> Result<f64> {
    if w.len() != p.dim() {
        return Err(Error::Dimension(format!("{} components for {} exponents", w.len(), p.dim())));
    }
    let ln_mu = p.mu.ln();
    Ok(w.iter()
        .zip(&p.alphas)
        .map(|(v, &a)| {
            let s = v.norm_sqr();
            let shape = if a != 1.0 { (a - 1.0) * s.ln() } else { 0.0 };
            -PI.ln() - log_gamma(a).expect("validated exponent") + a * ln_mu + shape - p.mu * s
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxFamily {
    ModelA,
    Independent,
}

/// Exact samples from either family.
pub fn sample_aux(p: &AuxGammaParams, which: AuxFamily, n: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = stream_rng(seed, 11);
    let gammas: Vec<Gamma<f64>> = p
        .alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0 / p.mu).expect("validated parameters"))
        .collect();
    let dim = p.dim();
    let mut order: Vec<usize> = (0..dim).collect();
    (0..n)
        .map(|_| {
            let mut mags: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
            if which == AuxFamily::ModelA {
                for i in 1..dim {
                    mags[i] += mags[i - 1];
                }
                order.shuffle(&mut rng);
            }
            (0..dim)
                .map(|i| {
                    let s = if which == AuxFamily::ModelA { mags[order[i]] } else { mags[i] };
                    Complex64::from_polar(s.sqrt(), rng.random::<f64>() * 2.0 * PI)
                })
                .collect()
        })
        .collect()
}
