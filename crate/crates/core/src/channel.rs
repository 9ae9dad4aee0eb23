//! Channel matrices, phase-noise processes and sampled input/output batches.
//!
//! The channel is `y_t = (H ∘ e^{jΘ_t}) x_t + z_t` with `z_t ~ CN(0, I)`, so
//! the transmit power `P` is also the SNR.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Stream id reserved for additive noise, disjoint from phase streams.
pub(crate) const NOISE_STREAM: u64 = 1 << 40;
const GENERIC_RETRIES: usize = 64;
const GENERIC_COND_LIMIT: f64 = 1e12;

/// Seeded generator on an independent stream of the same key.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw from `CN(0, var)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// A fixed channel matrix known to be generic.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub n_r: usize,
    pub n_t: usize,
    pub seed: u64,
}

impl ChannelRealization {
    /// Wrap a user-supplied matrix, checking genericity.
    pub fn new(h: CMatrix, seed: u64) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Dimension("channel matrix must be non-empty".into()));
        }
        if !is_generic(&h) {
            return Err(Error::Singular("channel matrix has an ill-conditioned square submatrix".into()));
        }
        Ok(Self { n_r: h.nrows(), n_t: h.ncols(), h, seed })
    }
}

/// Every square submatrix up to size `min(n_r, n_t)` has condition number below 1e12.
pub fn is_generic(h: &CMatrix) -> bool {
    let m = h.nrows().min(h.ncols());
    (1..=m).all(|size| {
        subsets(h.nrows(), size).iter().all(|rows| {
            subsets(h.ncols(), size).iter().all(|cols| {
                let sub = CMatrix::from_fn(size, size, |i, j| h[(rows[i], cols[j])]);
                condition_number(&sub) < GENERIC_COND_LIMIT
            })
        })
    })
}

fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub(crate) fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// I.i.d. `CN(0, 1)` matrix, redrawn until generic.
pub fn generate_generic_matrix(n_r: usize, n_t: usize, seed: u64) -> Result<ChannelRealization> {
    if n_r == 0 || n_t == 0 {
        return domain("channel dimensions must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GENERIC_RETRIES {
        let h = CMatrix::from_fn(n_r, n_t, |_, _| complex_normal(&mut rng, 1.0));
        if is_generic(&h) {
            return Ok(ChannelRealization { h, n_r, n_t, seed });
        }
    }
    Err(Error::Generation(GENERIC_RETRIES))
}

/// Where phase noise enters the channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStructure {
    /// Independent phase on every path (model A).
    PerPath,
    /// Transmit and receive oscillators, `Θ_ik = Θ_R,i + Θ_T,k` (model B1).
    TxRx,
    /// Transmit oscillators only (model B2).
    TxOnly,
    /// Receive oscillators only (model B3).
    RxOnly,
    /// One phase shared by all paths.
    Common,
    /// Coherent channel.
    None,
}

/// Time evolution of each phase stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhaseProcess {
    IidUniform,
    /// `θ_{t+1} = (θ_t + W_t) mod 2π`, `W_t ~ N(0, sigma2)`, uniform start.
    WrappedWiener { sigma2: f64 },
    /// Constant phase; for tests.
    Degenerate { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseSpec {
    pub structure: PhaseStructure,
    pub process: PhaseProcess,
}

impl PhaseNoiseSpec {
    pub fn new(structure: PhaseStructure, process: PhaseProcess) -> Result<Self> {
        if let PhaseProcess::WrappedWiener { sigma2 } = process {
            if !(sigma2 > 0.0) {
                return domain(format!("wrapped Wiener needs sigma2 > 0, got {sigma2}"));
            }
        }
        Ok(Self { structure, process })
    }

    pub fn iid(structure: PhaseStructure) -> Self {
        Self { structure, process: PhaseProcess::IidUniform }
    }

    /// Marginal of every stream is uniform on the circle.
    pub fn uniform_marginal(&self) -> bool {
        matches!(self.process, PhaseProcess::IidUniform | PhaseProcess::WrappedWiener { .. })
    }

    /// Each output component carries its own independent uniform phase, so
    /// that `h(Y) = h(|Y|²) + n_r log2 π`.
    pub fn independent_output_phases(&self) -> bool {
        self.uniform_marginal()
            && matches!(self.structure, PhaseStructure::PerPath | PhaseStructure::TxRx | PhaseStructure::RxOnly)
    }

    pub fn stream_count(&self, n_r: usize, n_t: usize) -> usize {
        match self.structure {
            PhaseStructure::PerPath => n_r * n_t,
            PhaseStructure::TxRx => n_t + n_r,
            PhaseStructure::TxOnly => n_t,
            PhaseStructure::RxOnly => n_r,
            PhaseStructure::Common => 1,
            PhaseStructure::None => 0,
        }
    }
}

/// Recorded phase streams of one batch.
///
/// Stream layout: `PerPath` row-major `i * n_t + k`; `TxRx` transmit streams
/// first, then receive streams.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDraws {
    pub structure: PhaseStructure,
    pub n_r: usize,
    pub n_t: usize,
    pub streams: Vec<Vec<f64>>,
}

impl PhaseDraws {
    /// `Θ_ik` at time `t`, in `[0, 2π)`.
    pub fn phase(&self, t: usize, i: usize, k: usize) -> f64 {
        let s = &self.streams;
        match self.structure {
            PhaseStructure::PerPath => s[i * self.n_t + k][t],
            PhaseStructure::TxRx => (s[self.n_t + i][t] + s[k][t]).rem_euclid(2.0 * PI),
            PhaseStructure::TxOnly => s[k][t],
            PhaseStructure::RxOnly => s[i][t],
            PhaseStructure::Common => s[0][t],
            PhaseStructure::None => 0.0,
        }
    }

    /// `e^{jΘ_t}` as an `n_r × n_t` matrix.
    pub fn rotation(&self, t: usize) -> CMatrix {
        CMatrix::from_fn(self.n_r, self.n_t, |i, k| Complex64::from_polar(1.0, self.phase(t, i, k)))
    }

    /// The same draws expressed as independent per-path streams.
    pub fn to_per_path(&self, n: usize) -> PhaseDraws {
        let streams = (0..self.n_r * self.n_t)
            .map(|idx| (0..n).map(|t| self.phase(t, idx / self.n_t, idx % self.n_t)).collect())
            .collect();
        PhaseDraws { structure: PhaseStructure::PerPath, n_r: self.n_r, n_t: self.n_t, streams }
    }
}

fn phase_stream(process: PhaseProcess, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let two_pi = 2.0 * PI;
    match process {
        PhaseProcess::IidUniform => (0..n).map(|_| rng.random::<f64>() * two_pi).collect(),
        PhaseProcess::Degenerate { value } => vec![value.rem_euclid(two_pi); n],
        PhaseProcess::WrappedWiener { sigma2 } => {
            let step = Normal::new(0.0, sigma2.sqrt()).expect("validated sigma2");
            let mut theta = rng.random::<f64>() * two_pi;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(theta);
                theta = (theta + step.sample(rng)).rem_euclid(two_pi);
            }
            out
        }
    }
}

/// Draw `n` time steps of every phase stream required by `spec`.
pub fn sample_phase_matrix(spec: &PhaseNoiseSpec, n_r: usize, n_t: usize, n: usize, seed: u64) -> PhaseDraws {
    let streams = (0..spec.stream_count(n_r, n_t))
        .map(|s| phase_stream(spec.process, n, &mut stream_rng(seed, s as u64)))
        .collect();
    PhaseDraws { structure: spec.structure, n_r, n_t, streams }
}

/// Input/output pairs of one simulated block.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    /// `n_t × N` inputs.
    pub x: CMatrix,
    /// `n_r × N` outputs.
    pub y: CMatrix,
    /// `n_r × N` additive noise actually used.
    pub z: CMatrix,
    pub phases: PhaseDraws,
    pub seed: u64,
    pub power: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Recompute the outputs from `h`, the stored phases and the stored noise.
    pub fn replay(&self, h: &CMatrix) -> CMatrix {
        let mut y = self.z.clone();
        for t in 0..self.len() {
            let g = h.component_mul(&self.phases.rotation(t));
            let col = &g * self.x.column(t);
            for i in 0..y.nrows() {
                y[(i, t)] += col[i];
            }
        }
        y
    }

    /// CSV with one row per time step: `t, x0_re, x0_im, ..., y0_re, y0_im, ...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for k in 0..self.x.nrows() {
            header.push(format!("x{k}_re"));
            header.push(format!("x{k}_im"));
        }
        for i in 0..self.y.nrows() {
            header.push(format!("y{i}_re"));
            header.push(format!("y{i}_im"));
        }
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            for v in self.x.column(t).iter().chain(self.y.column(t).iter()) {
                rec.push(v.re.to_string());
                rec.push(v.im.to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Pass `x` (`n_t × N`) through the channel.
pub fn apply_channel(
    ch: &ChannelRealization,
    spec: &PhaseNoiseSpec,
    x: &CMatrix,
    power: f64,
    seed: u64,
) -> Result<SampleBatch> {
    if x.nrows() != ch.n_t {
        return Err(Error::Dimension(format!("x has {} rows, channel has {} inputs", x.nrows(), ch.n_t)));
    }
    let n = x.ncols();
    if n > 0 {
        let mean = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        if mean > 1.05 * power {
            return Err(Error::Power { mean, power });
        }
    }
    let phases = sample_phase_matrix(spec, ch.n_r, ch.n_t, n, seed);
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let z = CMatrix::from_fn(ch.n_r, n, |_, _| complex_normal(&mut rng, 1.0));
    let mut batch = SampleBatch { x: x.clone(), y: CMatrix::zeros(ch.n_r, n), z, phases, seed, power };
    batch.y = batch.replay(&ch.h);
    Ok(batch)
}

/// `G_(u) = diag(1/h_{1u}, ..., 1/h_{n_r u}) · H`.
pub fn canonical_transform(ch: &ChannelRealization, u: usize) -> Result<CMatrix> {
    if u >= ch.n_t {
        return Err(Error::Dimension(format!("column {u} out of range for {} inputs", ch.n_t)));
    }
    let mut g = ch.h.clone();
    for i in 0..ch.n_r {
        let d = ch.h[(i, u)];
        if d.norm() == 0.0 {
            return Err(Error::Singular(format!("h[{i},{u}] is zero")));
        }
        let inv = d.inv();
        for k in 0..ch.n_t {
            g[(i, k)] *= inv;
        }
    }
    Ok(g)
}

/// Index of the largest-magnitude entry; lowest index on ties.
pub fn strongest_index(x: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in x.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    best
}

/// Input distributions used by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputLaw {
    /// `CN(0, (P/active) I)` on the first `active` antennas.
    Gaussian { active: usize },
    /// `X = √P · L g`, `g ~ CN(0, I)`; `L` is rescaled to unit Frobenius norm.
    GaussianCov { factor: Vec<Vec<[f64; 2]>> },
    /// Nonnegative real amplitude `|CN(0, P)|` on one antenna, zero elsewhere.
    SingleAntennaAmplitude { antenna: usize },
    /// Isotropic direction with `|X|²` log-uniform over a spread of `e^{±spread}`.
    LogRadial { spread: f64 },
    /// Uniform draw from a fixed constellation, rescaled to mean power `P`.
    Empirical { points: Vec<Vec<[f64; 2]>> },
    Zero,
}

impl InputLaw {
    /// A random law for robustness sweeps: random-covariance Gaussian,
    /// log-radial or single-antenna amplitude, chosen by `seed`.
    pub fn random(n_t: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 7);
        match rng.random_range(0..3) {
            0 => {
                let rank = rng.random_range(1..=n_t);
                let factor = (0..n_t)
                    .map(|_| {
                        (0..rank)
                            .map(|_| {
                                let c = complex_normal(&mut rng, 1.0);
                                [c.re, c.im]
                            })
                            .collect()
                    })
                    .collect();
                InputLaw::GaussianCov { factor }
            }
            1 => InputLaw::LogRadial { spread: rng.random_range(0.5..6.0) },
            _ => InputLaw::SingleAntennaAmplitude { antenna: rng.random_range(0..n_t) },
        }
    }

    pub fn validate(&self, n_t: usize) -> Result<()> {
        match self {
            InputLaw::Gaussian { active } if *active == 0 || *active > n_t => {
                domain(format!("active antennas must be in 1..={n_t}, got {active}"))
            }
            InputLaw::SingleAntennaAmplitude { antenna } if *antenna >= n_t => {
                domain(format!("antenna index {antenna} out of range for {n_t} inputs"))
            }
            InputLaw::GaussianCov { factor } if factor.len() != n_t || factor.iter().any(|r| r.len() != factor[0].len()) => {
                Err(Error::Dimension("covariance factor must have n_t equal-length rows".into()))
            }
            InputLaw::LogRadial { spread } if !(*spread > 0.0) => domain("log-radial spread must be positive"),
            InputLaw::Empirical { points } if points.is_empty() || points.iter().any(|p| p.len() != n_t) => {
                Err(Error::Dimension("constellation points must be non-empty with n_t entries".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `n_t × n` input samples with mean power `P`.
///
/// If the empirical power of the batch exceeds `1.05 P` (possible for small
/// `n` or heavy-tailed laws) the batch is rescaled to exactly `P`.
pub fn sample_inputs(law: &InputLaw, n_t: usize, power: f64, n: usize, seed: u64) -> Result<CMatrix> {
    law.validate(n_t)?;
    if !(power >= 0.0) {
        return domain(format!("power must be nonnegative, got {power}"));
    }
    let mut rng = stream_rng(seed, 3);
    let mut x = CMatrix::zeros(n_t, n);
    match law {
        InputLaw::Gaussian { active } => {
            let var = power / *active as f64;
            for t in 0..n {
                for k in 0..*active {
                    x[(k, t)] = complex_normal(&mut rng, var);
                }
            }
        }
        InputLaw::GaussianCov { factor } => {
            let l = CMatrix::from_fn(n_t, factor[0].len(), |i, j| Complex64::new(factor[i][j][0], factor[i][j][1]));
            let fro = l.norm();
            if fro == 0.0 {
                return domain("covariance factor is zero");
            }
            let l = l.map(|v| v * (power.sqrt() / fro));
            for t in 0..n {
                let g = nalgebra::DVector::from_fn(l.ncols(), |_, _| complex_normal(&mut rng, 1.0));
                x.set_column(t, &(&l * g));
            }
        }
        InputLaw::SingleAntennaAmplitude { antenna } => {
            for t in 0..n {
                x[(*antenna, t)] = Complex64::new(complex_normal(&mut rng, power).norm(), 0.0);
            }
        }
        InputLaw::LogRadial { spread } => {
            let mean_exp = spread.sinh() / spread;
            for t in 0..n {
                let s = rng.random_range(-spread..*spread);
                let r2 = power * s.exp() / mean_exp;
                let dir = nalgebra::DVector::from_fn(n_t, |_, _| complex_normal(&mut rng, 1.0));
                let dir = dir.unscale(dir.norm());
                x.set_column(t, &dir.scale(r2.sqrt()));
            }
        }
        InputLaw::Empirical { points } => {
            let mean = points.iter().map(|p| p.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>()).sum::<f64>()
                / points.len() as f64;
            let scale = if mean > 0.0 { (power / mean).sqrt() } else { 0.0 };
            for t in 0..n {
                let p = &points[rng.random_range(0..points.len())];
                for k in 0..n_t {
                    x[(k, t)] = Complex64::new(p[k][0], p[k][1]) * scale;
                }
            }
        }
        InputLaw::Zero => {}
    }
    if n > 0 {
        let mean = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        if mean > 1.05 * power && mean > 0.0 {
            x.scale_mut((power / mean).sqrt());
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_uniform(samples: &mut [f64], hi: f64) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = v / hi;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_channel_nonzero_and_reproducible() {
        let a = generate_generic_matrix(1, 1, 5).unwrap();
        assert!(a.h[(0, 0)].norm() > 0.0);
        let b = generate_generic_matrix(1, 1, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn three_by_two_minors_nonsingular() {
        let ch = generate_generic_matrix(3, 2, 11).unwrap();
        for rows in subsets(3, 2) {
            let (a, b) = (rows[0], rows[1]);
            let det = ch.h[(a, 0)] * ch.h[(b, 1)] - ch.h[(a, 1)] * ch.h[(b, 0)];
            assert!(det.norm() > 1e-8);
        }
    }

    #[test]
    fn rejects_rank_deficient_matrix() {
        let h = CMatrix::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0));
        assert!(ChannelRealization::new(h, 0).is_err());
    }

    #[test]
    fn degenerate_zero_gives_zero_phases() {
        let spec = PhaseNoiseSpec::new(PhaseStructure::PerPath, PhaseProcess::Degenerate { value: 0.0 }).unwrap();
        let d = sample_phase_matrix(&spec, 2, 3, 50, 1);
        assert!(d.streams.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn iid_uniform_passes_ks() {
        let spec = PhaseNoiseSpec::iid(PhaseStructure::Common);
        let mut d = sample_phase_matrix(&spec, 1, 1, 100_000, 9);
        let stat = ks_uniform(&mut d.streams[0], 2.0 * PI);
        // 1% critical value 1.628 / sqrt(n).
        assert!(stat < 1.628 / (1e5f64).sqrt(), "KS {stat}");
    }

    #[test]
    fn wiener_marginal_uniform_at_late_time() {
        let spec = PhaseNoiseSpec::new(PhaseStructure::Common, PhaseProcess::WrappedWiener { sigma2: 0.01 }).unwrap();
        let mut late: Vec<f64> = (0..2000)
            .map(|s| sample_phase_matrix(&spec, 1, 1, 10_001, s).streams[0][10_000])
            .collect();
        let stat = ks_uniform(&mut late, 2.0 * PI);
        assert!(stat < 1.628 / (2000f64).sqrt(), "KS {stat}");
    }

    #[test]
    fn wiener_rejects_nonpositive_variance() {
        assert!(PhaseNoiseSpec::new(PhaseStructure::TxOnly, PhaseProcess::WrappedWiener { sigma2: 0.0 }).is_err());
    }

    #[test]
    fn txrx_composition_exact() {
        let spec = PhaseNoiseSpec::iid(PhaseStructure::TxRx);
        let d = sample_phase_matrix(&spec, 3, 2, 20, 4);
        for t in 0..20 {
            for i in 0..3 {
                for k in 0..2 {
                    let expect = (d.streams[2 + i][t] + d.streams[k][t]).rem_euclid(2.0 * PI);
                    assert_eq!(d.phase(t, i, k), expect);
                }
            }
        }
    }

    #[test]
    fn zero_input_gives_unit_noise() {
        let ch = generate_generic_matrix(2, 2, 1).unwrap();
        let n = 50_000;
        let b = apply_channel(&ch, &PhaseNoiseSpec::iid(PhaseStructure::PerPath), &CMatrix::zeros(2, n), 1.0, 3).unwrap();
        assert_eq!(b.y, b.z);
        for i in 0..2 {
            let var = b.y.row(i).iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            // Var of |z|^2 is 1, so sigma of the mean is 1/sqrt(n).
            assert!((var - 1.0).abs() < 3.0 / (n as f64).sqrt(), "{var}");
        }
    }

    #[test]
    fn coherent_reduction() {
        let ch = generate_generic_matrix(3, 2, 2).unwrap();
        let spec = PhaseNoiseSpec::new(PhaseStructure::PerPath, PhaseProcess::Degenerate { value: 0.0 }).unwrap();
        let x = sample_inputs(&InputLaw::Gaussian { active: 2 }, 2, 10.0, 100, 5).unwrap();
        let b = apply_channel(&ch, &spec, &x, 10.0, 6).unwrap();
        let diff = (&b.y - &b.z) - &ch.h * &x;
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn txrx_replay_from_stored_streams() {
        let ch = generate_generic_matrix(2, 2, 8).unwrap();
        let x = sample_inputs(&InputLaw::Gaussian { active: 2 }, 2, 100.0, 200, 1).unwrap();
        let b = apply_channel(&ch, &PhaseNoiseSpec::iid(PhaseStructure::TxRx), &x, 100.0, 2).unwrap();
        for t in 0..200 {
            for i in 0..2 {
                let mut y = b.z[(i, t)];
                for k in 0..2 {
                    let th = b.phases.streams[k][t] + b.phases.streams[2 + i][t];
                    y += ch.h[(i, k)] * Complex64::from_polar(1.0, th) * x[(k, t)];
                }
                assert!((y - b.y[(i, t)]).norm() < 1e-12 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn txrx_equals_per_path_reexpression() {
        let ch = generate_generic_matrix(3, 2, 8).unwrap();
        let x = sample_inputs(&InputLaw::Gaussian { active: 2 }, 2, 100.0, 64, 1).unwrap();
        let b = apply_channel(&ch, &PhaseNoiseSpec::iid(PhaseStructure::TxRx), &x, 100.0, 2).unwrap();
        let mut c = b.clone();
        c.phases = b.phases.to_per_path(64);
        assert_eq!(c.replay(&ch.h), b.y);
    }

    #[test]
    fn batches_are_deterministic() {
        let ch = generate_generic_matrix(2, 3, 1).unwrap();
        let spec = PhaseNoiseSpec::new(PhaseStructure::TxRx, PhaseProcess::WrappedWiener { sigma2: 0.1 }).unwrap();
        let x = sample_inputs(&InputLaw::LogRadial { spread: 2.0 }, 3, 50.0, 100, 4).unwrap();
        let a = apply_channel(&ch, &spec, &x, 50.0, 77).unwrap();
        let b = apply_channel(&ch, &spec, &x, 50.0, 77).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.phases, b.phases);
    }

    #[test]
    fn dimension_and_power_checks() {
        let ch = generate_generic_matrix(2, 2, 1).unwrap();
        let spec = PhaseNoiseSpec::iid(PhaseStructure::None);
        assert!(matches!(apply_channel(&ch, &spec, &CMatrix::zeros(3, 4), 1.0, 0), Err(Error::Dimension(_))));
        let x = CMatrix::from_element(2, 4, Complex64::new(10.0, 0.0));
        assert!(matches!(apply_channel(&ch, &spec, &x, 1.0, 0), Err(Error::Power { .. })));
    }

    #[test]
    fn canonical_form_properties() {
        let ch = generate_generic_matrix(3, 2, 21).unwrap();
        for u in 0..2 {
            let g = canonical_transform(&ch, u).unwrap();
            for i in 0..3 {
                assert!((g[(i, u)].norm() - 1.0).abs() < 1e-12);
                for k in 0..2 {
                    assert!((ch.h[(i, u)] * g[(i, k)] - ch.h[(i, k)]).norm() < 1e-12);
                }
            }
        }
        let single = generate_generic_matrix(4, 1, 2).unwrap();
        let g = canonical_transform(&single, 0).unwrap();
        assert!(g.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert!(canonical_transform(&single, 1).is_err());
    }

    #[test]
    fn canonical_rejects_zero_entry() {
        let ch = ChannelRealization { h: CMatrix::from_row_slice(1, 2, &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]), n_r: 1, n_t: 2, seed: 0 };
        assert!(matches!(canonical_transform(&ch, 0), Err(Error::Singular(_))));
    }

    #[test]
    fn strongest_index_rules() {
        let x = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 3.0), Complex64::new(-2.0, 0.0)];
        assert_eq!(strongest_index(&x), 1);
        let eq = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0)];
        assert_eq!(strongest_index(&eq), 0);
    }

    #[test]
    fn input_laws_meet_power() {
        for seed in 0..12 {
            let law = InputLaw::random(3, seed);
            let x = sample_inputs(&law, 3, 7.0, 20_000, seed).unwrap();
            let mean = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / 20_000.0;
            assert!(mean <= 1.05 * 7.0 && mean > 0.8 * 7.0, "{law:?}: {mean}");
        }
        assert!(sample_inputs(&InputLaw::Gaussian { active: 3 }, 2, 1.0, 1, 0).is_err());
    }
}
