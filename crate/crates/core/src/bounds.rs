//! Pre-log predictions, Monte-Carlo bound evaluation and slope fitting.
//!
//! Capacity constants are never computed: the evaluators return the
//! slope-bearing terms and the experiments compare slopes and inequalities.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::auxdist::{aux_logq_model_a, AuxGammaParams};
use crate::channel::{
    apply_channel, canonical_transform, complex_normal, sample_inputs, sample_phase_matrix, stream_rng,
    strongest_index, CMatrix, ChannelRealization, InputLaw, PhaseNoiseSpec, PhaseStructure, NOISE_STREAM,
};
use crate::entropy::{complex_entropy, EntropyEstimate, KnnConfig, Representation};
use crate::error::{domain, Error, Result};
use crate::likelihood::PhaseLikelihood;
use crate::mathfn::nats_to_bits;

/// Phase-noise model of the channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    A,
    B1,
    B2,
    B3,
    #[serde(rename = "common")]
    Common,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::A, Model::B1, Model::B2, Model::B3, Model::Common];

    pub fn structure(self) -> PhaseStructure {
        match self {
            Model::A => PhaseStructure::PerPath,
            Model::B1 => PhaseStructure::TxRx,
            Model::B2 => PhaseStructure::TxOnly,
            Model::B3 => PhaseStructure::RxOnly,
            Model::Common => PhaseStructure::Common,
        }
    }

    pub fn from_structure(s: PhaseStructure) -> Option<Model> {
        Model::ALL.into_iter().find(|m| m.structure() == s)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::A => "A",
            Model::B1 => "B1",
            Model::B2 => "B2",
            Model::B3 => "B3",
            Model::Common => "common",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Domain(format!("unknown model '{s}'; allowed values: A, B1, B2, B3, common")))
    }
}

/// Lower and upper pre-log (multiplexing gain) prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrelogPrediction {
    pub lower: f64,
    pub upper: f64,
    pub tight: bool,
}

pub fn prelog_prediction(model: Model, n_t: usize, n_r: usize) -> PrelogPrediction {
    let (t, r) = (n_t as f64, n_r as f64);
    let exact = |v: f64| PrelogPrediction { lower: v, upper: v, tight: true };
    match model {
        Model::A => exact(0.5),
        Model::B1 => {
            let lower = 0.5 * n_t.min(n_r.div_ceil(2)) as f64;
            let upper = 0.5 * n_t.min(n_r.saturating_sub(2) + 1) as f64;
            PrelogPrediction { lower, upper, tight: lower == upper }
        }
        Model::B2 => exact(0.5 * t.min(r)),
        Model::B3 => exact((0.5 * r).min(t - 0.5)),
        Model::Common => exact(t.min(r) - 0.5),
    }
}

/// One `(log2 P, value, std_err)` sample of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub log2_p: f64,
    pub value: f64,
    pub std_err: f64,
}

/// Least-squares line through the top of an SNR sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrelogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `[min, max]` of log2 P over the fitted points.
    pub window: [f64; 2],
    pub slope_se: f64,
}

pub const DEFAULT_FIT_WINDOW: usize = 4;

pub fn fit_prelog(points: &[FitPoint]) -> Result<PrelogFit> {
    fit_prelog_window(points, DEFAULT_FIT_WINDOW)
}

/// Weighted fit over the `window` highest-SNR points.
///
/// Weights are `1/se²` when every point has a positive standard error and
/// uniform otherwise.
pub fn fit_prelog_window(points: &[FitPoint], window: usize) -> Result<PrelogFit> {
    if points.len() < 3 || window < 3 {
        return domain(format!("a fit needs at least 3 points, got {}", points.len().min(window)));
    }
    if points.windows(2).any(|w| !(w[1].log2_p > w[0].log2_p)) {
        return domain("SNR grid must be strictly increasing");
    }
    let pts = &points[points.len().saturating_sub(window)..];
    let weighted = pts.iter().all(|p| p.std_err > 0.0);
    let w: Vec<f64> = pts.iter().map(|p| if weighted { p.std_err.powi(-2) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let mx = pts.iter().zip(&w).map(|(p, w)| w * p.log2_p).sum::<f64>() / sw;
    let my = pts.iter().zip(&w).map(|(p, w)| w * p.value).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.log2_p - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.log2_p - mx) * (p.value - my)).sum();
    let syy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.value - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.value - intercept - slope * p.log2_p).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_se = if weighted {
        sxx.recip().sqrt()
    } else {
        (ss_res / (pts.len() - 2) as f64 / sxx).sqrt()
    };
    Ok(PrelogFit {
        slope,
        intercept,
        r2,
        window: [pts[0].log2_p, pts[pts.len() - 1].log2_p],
        slope_se,
    })
}

/// Sample sizes and estimator settings shared by the bound evaluators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Channel uses drawn per SNR point; used for nearest-neighbour entropies.
    pub n_samples: usize,
    /// Leading samples used for the exact conditional entropy.
    pub n_likelihood: usize,
    pub knn: KnnConfig,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { n_samples: 20_000, n_likelihood: 5_000, knn: KnnConfig::default(), seed: 1 }
    }
}

fn representation(spec: &PhaseNoiseSpec) -> Representation {
    if spec.independent_output_phases() {
        Representation::SquaredMagnitude
    } else {
        Representation::Cartesian
    }
}

fn leading_columns(m: &CMatrix, n: usize) -> CMatrix {
    m.columns(0, n.min(m.ncols())).into_owned()
}

/// `ĥ(Y)` for a given input law at power `P`.
pub fn output_entropy(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    law: &InputLaw,
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<EntropyEstimate> {
    let x = sample_inputs(law, ch.n_t, power, cfg.n_samples, cfg.seed)?;
    let batch = apply_channel(ch, spec, &x, power, cfg.seed.wrapping_add(1))?;
    complex_entropy(&batch.y, representation(spec), power.max(1.0), &cfg.knn)
}

/// `Î(X; Y) = ĥ(Y) - ĥ(Y|X)` with the conditional term from the exact likelihood.
pub fn mutual_information_estimate(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    law: &InputLaw,
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<EntropyEstimate> {
    let x = sample_inputs(law, ch.n_t, power, cfg.n_samples, cfg.seed)?;
    let batch = apply_channel(ch, spec, &x, power, cfg.seed.wrapping_add(1))?;
    let h_y = complex_entropy(&batch.y, representation(spec), power.max(1.0), &cfg.knn)?;
    let n = cfg.n_likelihood.min(batch.len());
    let h_y_x = PhaseLikelihood::new(&ch.h, spec).conditional_entropy(&leading_columns(&batch.x, n), &leading_columns(&batch.y, n))?;
    Ok(h_y.minus(&h_y_x))
}

/// Default number of active antennas for the Gaussian-input lower bound.
pub fn default_active(model: Model, n_t: usize, n_r: usize) -> usize {
    match model {
        Model::B1 => n_t.min(n_r.div_ceil(2)),
        _ => n_t,
    }
}

/// `Î(X; Y)` for `X ~ CN(0, (P/n_active) I)` on the first `n_active` antennas.
///
/// With `inversion` (transmit phase noise only, `n_r >= n_active`) the
/// output is first mapped through the pseudo-inverse of the active columns,
/// which loses no information.
pub fn gaussian_input_mi_lower(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    power: f64,
    n_active: Option<usize>,
    inversion: bool,
    cfg: &EstimatorConfig,
) -> Result<EntropyEstimate> {
    let model = match Model::from_structure(spec.structure) {
        Some(m @ (Model::B1 | Model::B2 | Model::B3 | Model::Common)) => m,
        _ => return domain("the Gaussian-input bound covers models B1, B2, B3 and common"),
    };
    let active = n_active.unwrap_or_else(|| default_active(model, ch.n_t, ch.n_r));
    let law = InputLaw::Gaussian { active };
    if !inversion {
        return mutual_information_estimate(ch, spec, &law, power, cfg);
    }
    if model != Model::B2 || ch.n_r < active {
        return domain("channel inversion needs transmit-only phase noise and n_r >= n_active");
    }
    let x = sample_inputs(&law, ch.n_t, power, cfg.n_samples, cfg.seed)?;
    let batch = apply_channel(ch, spec, &x, power, cfg.seed.wrapping_add(1))?;
    let ha = ch.h.columns(0, active).into_owned();
    let gram = ha.adjoint() * &ha;
    let gram_inv = gram.clone().try_inverse().ok_or_else(|| Error::Singular("active columns are dependent".into()))?;
    let pinv = &gram_inv * ha.adjoint();
    let v = &pinv * &batch.y;
    let h_v = complex_entropy(&v, Representation::Cartesian, power.max(1.0), &cfg.knn)?;
    // Whiten the noise H†Z (covariance K = (HᴴH)⁻¹): U = L⁻¹V with K = LLᴴ,
    // so h(V|X) = h(U|X) + log2 det K.
    let chol = nalgebra::Cholesky::new(gram_inv.clone()).ok_or_else(|| Error::Singular("noise covariance".into()))?;
    let l_inv = chol.l().try_inverse().ok_or_else(|| Error::Singular("noise covariance".into()))?;
    let n = cfg.n_likelihood.min(batch.len());
    let xa = batch.x.rows(0, active).columns(0, n).into_owned();
    let u = &l_inv * v.columns(0, n);
    let h_u_x = PhaseLikelihood::new(&l_inv, spec).conditional_entropy(&xa, &u)?;
    let log_det_k = gram_inv.determinant().re.log2();
    Ok(h_v.minus(&h_u_x.shifted(log_det_k)))
}

/// `ĥ(Y)` slope check with Gaussian input on all antennas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub fit: PrelogFit,
    /// `n_r/2 + min(n_r, 2n_t - 1)/2`.
    pub predicted_slope: f64,
    pub points: Vec<FitPoint>,
}

pub fn hy_growth_check(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    powers: &[f64],
    cfg: &EstimatorConfig,
) -> Result<GrowthCheck> {
    if !matches!(spec.structure, PhaseStructure::RxOnly | PhaseStructure::TxRx) {
        return domain("growth check needs receive phase noise");
    }
    let law = InputLaw::Gaussian { active: ch.n_t };
    let points = powers
        .iter()
        .map(|&p| {
            let e = output_entropy(ch, spec, &law, p, cfg)?;
            Ok(FitPoint { log2_p: p.log2(), value: e.value, std_err: e.std_err })
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted_slope = 0.5 * ch.n_r as f64 + 0.5 * ch.n_r.min(2 * ch.n_t - 1) as f64;
    Ok(GrowthCheck { fit: fit_prelog(&points)?, predicted_slope, points })
}

fn log_plus0(x: f64) -> f64 {
    if x > 1.0 {
        x.log2()
    } else {
        0.0
    }
}

/// The two largest magnitudes of a vector.
fn top_two(x: &[Complex64]) -> (f64, f64) {
    let mut m: Vec<f64> = x.iter().map(|v| v.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    (m[0], m.get(1).copied().unwrap_or(0.0))
}

/// Slope-bearing part of the lower bound on `h(W | X̃)`, in bits.
///
/// Model A: `n_r E[log⁺|X̃_U|] + n_r E[log⁺|X̃_V|]`; model B1:
/// `n_r E[log⁺|X̃_U|] + E[log⁺|X̃_V|]`, where `U`, `V` index the largest and
/// second-largest input magnitudes. `x_tilde` is `n_t × N`.
pub fn cond_entropy_lb_terms(model: Model, x_tilde: &CMatrix, n_r: usize) -> Result<f64> {
    let v_weight = match model {
        Model::A => n_r as f64,
        Model::B1 => 1.0,
        _ => return domain("conditional-entropy terms are defined for models A and B1"),
    };
    let n = x_tilde.ncols();
    if n == 0 {
        return domain("empty input batch");
    }
    let mut total = 0.0;
    for t in 0..n {
        let col: Vec<Complex64> = x_tilde.column(t).iter().copied().collect();
        let (u, v) = top_two(&col);
        total += n_r as f64 * log_plus0(u) + v_weight * log_plus0(v);
    }
    Ok(total / n as f64)
}

/// Noise-reduction scale `a` of the canonical-form argument.
pub fn canonical_scale(model: Model, h: &CMatrix) -> Result<f64> {
    match model {
        Model::A => Ok(1.0 / h.iter().map(|v| v.norm()).fold(0.0, f64::max)),
        Model::B1 => Ok(1.0 / h.clone().singular_values().max()),
        _ => domain("the duality bound covers models A and B1"),
    }
}

/// One evaluated point of a bound sweep. Entropies and informations in bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub model: Model,
    pub n_t: usize,
    pub n_r: usize,
    pub power: f64,
    pub alpha_vec: Vec<f64>,
    /// `E[-log q(W)]`.
    pub duality_term: Option<f64>,
    /// `ĥ(W | X̃)`.
    pub cond_term: Option<f64>,
    /// `ĥ(W | U)`.
    pub hw_given_u: Option<f64>,
    pub mi_lower: Option<f64>,
    /// `duality_term + log2 n_t - cond_term`.
    pub mi_upper: Option<f64>,
    pub se_duality: Option<f64>,
    pub se_cond: Option<f64>,
    pub se_hw_given_u: Option<f64>,
    pub se_mi_lower: Option<f64>,
    pub se_mi_upper: Option<f64>,
    /// `Ê[log⁺|X̃_U|]`.
    pub log_plus_u: Option<f64>,
    /// Error message when the row could not be evaluated.
    pub failure: Option<String>,
}

impl BoundRow {
    pub fn empty(model: Model, n_t: usize, n_r: usize, power: f64) -> Self {
        Self {
            model,
            n_t,
            n_r,
            power,
            alpha_vec: Vec::new(),
            duality_term: None,
            cond_term: None,
            hw_given_u: None,
            mi_lower: None,
            mi_upper: None,
            se_duality: None,
            se_cond: None,
            se_hw_given_u: None,
            se_mi_lower: None,
            se_mi_upper: None,
            log_plus_u: None,
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// `mi_upper >= mi_lower - 3σ` when both are present.
    pub fn certificate_holds(&self) -> bool {
        match (self.mi_upper, self.mi_lower) {
            (Some(u), Some(l)) => {
                let s = self.se_mi_upper.unwrap_or(0.0).hypot(self.se_mi_lower.unwrap_or(0.0));
                u >= l - 3.0 * s
            }
            _ => true,
        }
    }
}

/// Ordered list of rows, written as CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub const COLUMNS: [&'static str; 17] = [
        "model",
        "n_t",
        "n_r",
        "P",
        "alpha_vec",
        "duality_term",
        "cond_term",
        "mi_lower",
        "mi_upper",
        "se_duality",
        "se_cond",
        "se_mi_lower",
        "se_mi_upper",
        "hw_given_u",
        "se_hw_given_u",
        "log_plus_u",
        "failure",
    ];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::COLUMNS)?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let alphas: Vec<String> = r.alpha_vec.iter().map(|a| a.to_string()).collect();
            wtr.write_record([
                r.model.to_string(),
                r.n_t.to_string(),
                r.n_r.to_string(),
                r.power.to_string(),
                alphas.join(";"),
                f(r.duality_term),
                f(r.cond_term),
                f(r.mi_lower),
                f(r.mi_upper),
                f(r.se_duality),
                f(r.se_cond),
                f(r.se_mi_lower),
                f(r.se_mi_upper),
                f(r.hw_given_u),
                f(r.se_hw_given_u),
                f(r.log_plus_u),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Canonical-form outputs `W = (G_(U) ∘ e^{jΘ}) X̃ + Z` of one input batch.
#[derive(Clone, Debug)]
pub struct CanonicalBatch {
    pub x_tilde: CMatrix,
    pub w: CMatrix,
    pub u: Vec<usize>,
    pub scale: f64,
}

pub fn canonical_batch(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    law: &InputLaw,
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<CanonicalBatch> {
    let model = match Model::from_structure(spec.structure) {
        Some(m @ (Model::A | Model::B1)) => m,
        _ => return domain("the duality bound covers models A and B1"),
    };
    let a = canonical_scale(model, &ch.h)?;
    let x = sample_inputs(law, ch.n_t, power, cfg.n_samples, cfg.seed)?;
    let n = x.ncols();
    let x_tilde = x.unscale(a);
    let u: Vec<usize> = (0..n)
        .map(|t| strongest_index(&x_tilde.column(t).iter().copied().collect::<Vec<_>>()))
        .collect();
    let forms = (0..ch.n_t).map(|k| canonical_transform(ch, k)).collect::<Result<Vec<_>>>()?;
    let seed = cfg.seed.wrapping_add(1);
    let phases = sample_phase_matrix(spec, ch.n_r, ch.n_t, n, seed);
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let mut w = CMatrix::from_fn(ch.n_r, n, |_, _| complex_normal(&mut rng, 1.0));
    for t in 0..n {
        let s = forms[u[t]].component_mul(&phases.rotation(t)) * x_tilde.column(t);
        for i in 0..ch.n_r {
            w[(i, t)] += s[i];
        }
    }
    Ok(CanonicalBatch { x_tilde, w, u, scale: a })
}

/// `ĥ(W | X̃)` from the exact likelihood of each canonical form.
pub fn canonical_conditional_entropy(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    batch: &CanonicalBatch,
    n: usize,
) -> Result<EntropyEstimate> {
    use rayon::prelude::*;
    let n = n.min(batch.u.len());
    if n < 2 {
        return domain("need at least two samples for the conditional entropy");
    }
    let liks = (0..ch.n_t)
        .map(|k| Ok(PhaseLikelihood::new(&canonical_transform(ch, k)?, spec)))
        .collect::<Result<Vec<_>>>()?;
    let vals = (0..n)
        .into_par_iter()
        .map(|t| {
            let xs: Vec<Complex64> = batch.x_tilde.column(t).iter().copied().collect();
            let ws: Vec<Complex64> = batch.w.column(t).iter().copied().collect();
            liks[batch.u[t]].log_density(&xs, &ws).map(|v| -nats_to_bits(v))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(EntropyEstimate { value: mean, std_err: (var / n as f64).sqrt(), k: 0, n, dim: 2 * ch.n_r })
}

/// `ĥ(W | U)` as the mixture over strongest-input groups of per-group entropies.
///
/// Groups with fewer than 200 samples use the Gaussian maximum-entropy value
/// of their sample covariance, an upper bound on the true term.
pub fn canonical_entropy_given_u(batch: &CanonicalBatch, n_t: usize, knn: &KnnConfig) -> Result<EntropyEstimate> {
    let n = batch.u.len();
    let n_r = batch.w.nrows();
    let mut value = 0.0;
    let mut var = 0.0;
    for k in 0..n_t {
        let idx: Vec<usize> = (0..n).filter(|&t| batch.u[t] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let p = idx.len() as f64 / n as f64;
        let wk = batch.w.select_columns(&idx);
        if idx.len() >= 200 {
            let scale = (wk.iter().map(|v| v.norm_sqr()).sum::<f64>() / wk.len() as f64).max(1.0);
            let e = complex_entropy(&wk, Representation::SquaredMagnitude, scale, knn)?;
            value += p * e.value;
            var += (p * e.std_err).powi(2);
        } else {
            value += p * gaussian_max_entropy(&wk);
        }
    }
    Ok(EntropyEstimate { value, std_err: var.sqrt(), k: knn.k, n, dim: 2 * n_r })
}

fn gaussian_max_entropy(w: &CMatrix) -> f64 {
    let n = w.ncols().max(1) as f64;
    let mut cov = (w * w.adjoint()).unscale(n);
    for i in 0..cov.nrows() {
        cov[(i, i)] += Complex64::new(1e-12, 0.0);
    }
    let det = cov.determinant().re.max(f64::MIN_POSITIVE);
    w.nrows() as f64 * (std::f64::consts::PI * std::f64::consts::E).log2() + det.log2()
}

/// `E[-log2 q(W)]` with the order-statistics auxiliary density.
pub fn duality_term(w: &CMatrix, p: &AuxGammaParams) -> Result<EntropyEstimate> {
    let n = w.ncols();
    if n < 2 {
        return domain("need at least two samples");
    }
    let vals = (0..n)
        .map(|t| {
            let col: Vec<Complex64> = w.column(t).iter().copied().collect();
            aux_logq_model_a(&col, p).map(|v| -nats_to_bits(v))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(EntropyEstimate { value: mean, std_err: (var / n as f64).sqrt(), k: 0, n, dim: 2 * w.nrows() })
}

/// Duality evaluation for one input law, power and auxiliary parameter set.
///
/// Fills `duality_term`, `hw_given_u`, `cond_term`, `mi_upper` and the
/// matching standard errors; `mi_lower` is left to the caller.
pub fn duality_upper_estimate(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    law: &InputLaw,
    p: &AuxGammaParams,
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<BoundRow> {
    let batch = canonical_batch(ch, spec, law, power, cfg)?;
    let rows = duality_rows(ch, spec, &batch, std::slice::from_ref(p), power, cfg)?;
    Ok(rows.into_iter().next().expect("one parameter set"))
}

/// Duality rows for several auxiliary parameter sets sharing one batch.
pub fn duality_rows(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    batch: &CanonicalBatch,
    params: &[AuxGammaParams],
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<Vec<BoundRow>> {
    let model = Model::from_structure(spec.structure).expect("checked by canonical_batch");
    if let Some(p) = params.iter().find(|p| p.dim() != ch.n_r) {
        return Err(Error::Dimension(format!("{} exponents for {} outputs", p.dim(), ch.n_r)));
    }
    let h_wu = canonical_entropy_given_u(batch, ch.n_t, &cfg.knn)?;
    let h_wx = canonical_conditional_entropy(ch, spec, batch, cfg.n_likelihood)?;
    let lpu = (0..batch.u.len()).map(|t| log_plus0(batch.x_tilde[(batch.u[t], t)].norm())).sum::<f64>() / batch.u.len() as f64;
    params
        .iter()
        .map(|p| {
            let d = duality_term(&batch.w, p)?;
            let upper = d.value + (ch.n_t as f64).log2() - h_wx.value;
            let mut row = BoundRow::empty(model, ch.n_t, ch.n_r, power);
            row.alpha_vec = p.alphas.clone();
            row.duality_term = Some(d.value);
            row.se_duality = Some(d.std_err);
            row.hw_given_u = Some(h_wu.value);
            row.se_hw_given_u = Some(h_wu.std_err);
            row.cond_term = Some(h_wx.value);
            row.se_cond = Some(h_wx.std_err);
            row.mi_upper = Some(upper);
            row.se_mi_upper = Some(d.std_err.hypot(h_wx.std_err));
            row.log_plus_u = Some(lpu);
            Ok(row)
        })
        .collect()
}

/// Every α in `alphas` at one power, sharing one canonical batch.
///
/// `mi_lower` is the estimate for `law` itself. Returns the rows and the
/// index of the row with the smallest `mi_upper`.
pub fn duality_sweep_point(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    law: &InputLaw,
    alphas: &[Vec<f64>],
    power: f64,
    cfg: &EstimatorConfig,
) -> Result<(Vec<BoundRow>, usize)> {
    if alphas.is_empty() {
        return domain("empty α grid");
    }
    let params = alphas
        .iter()
        .map(|a| AuxGammaParams::for_power(a.clone(), power))
        .collect::<Result<Vec<_>>>()?;
    let batch = canonical_batch(ch, spec, law, power, cfg)?;
    let mut rows = duality_rows(ch, spec, &batch, &params, power, cfg)?;
    let lower = mutual_information_estimate(ch, spec, law, power, cfg)?;
    for r in &mut rows {
        r.mi_lower = Some(lower.value);
        r.se_mi_lower = Some(lower.std_err);
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| x.mi_upper.unwrap_or(f64::INFINITY).total_cmp(&y.mi_upper.unwrap_or(f64::INFINITY)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((rows, best))
}

/// All vectors over `grid^n`.
pub fn alpha_grid(grid: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                grid.iter().map(move |&a| {
                    let mut w = v.clone();
                    w.push(a);
                    w
                })
            })
            .collect();
    }
    out
}
