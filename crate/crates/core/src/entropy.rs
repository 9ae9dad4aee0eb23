//! Nearest-neighbour differential entropy and mutual information.
//!
//! The estimator is Kozachenko–Leonenko with a first-order bias correction:
//! the `k`- and `2k`-neighbour estimates are combined with weights that
//! cancel the leading `(k/n)^{2/d}` term of the bias. Standard errors come
//! from re-estimating on contiguous folds.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::stream_rng;
use crate::error::{domain, Error, Result};
use crate::mathfn::nats_to_bits;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Bits.
    pub value: f64,
    pub std_err: f64,
    pub k: usize,
    pub n: usize,
    pub dim: usize,
}

impl EntropyEstimate {
    /// `self - other` with independent errors combined in quadrature.
    pub fn minus(&self, other: &EntropyEstimate) -> EntropyEstimate {
        EntropyEstimate {
            value: self.value - other.value,
            std_err: self.std_err.hypot(other.std_err),
            ..*self
        }
    }

    pub fn shifted(&self, bits: f64) -> EntropyEstimate {
        EntropyEstimate { value: self.value + bits, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Folds used for the standard error; at least 10.
    pub folds: usize,
    /// Combine the k and 2k estimates to cancel the leading bias term.
    pub bias_correction: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 4, folds: 10, bias_correction: true }
    }
}

/// `n` points in `R^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Dimension(format!("{} values do not form {dim}-dimensional points", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("rows have different lengths".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PointSet {
        PointSet { dim: self.dim, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn slice(&self, start: usize, end: usize) -> PointSet {
        PointSet { dim: self.dim, data: self.data[start * self.dim..end * self.dim].to_vec() }
    }
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a [`PointSet`].
struct KdTree<'a> {
    points: &'a PointSet,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a PointSet) -> Self {
        let mut tree = KdTree { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        let n = points.len();
        tree.build_node(0, n);
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.points.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for (d, &v) in self.points.point(i).iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let axis = (0..dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts.point(a)[axis].total_cmp(&pts.point(b)[axis]));
        let value = pts.point(self.order[mid])[axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Squared distances to the `k` nearest neighbours of point `i`, ascending.
    fn knn(&self, i: usize, k: usize) -> Vec<f64> {
        let mut best = vec![f64::INFINITY; k];
        self.search(0, self.points.point(i), i, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[f64], skip: usize, best: &mut [f64]) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if j == skip {
                        continue;
                    }
                    let worst = best[best.len() - 1];
                    let mut d2 = 0.0;
                    for (a, b) in q.iter().zip(self.points.point(j)) {
                        d2 += (a - b) * (a - b);
                        if d2 >= worst {
                            break;
                        }
                    }
                    if d2 < worst {
                        let mut pos = best.len() - 1;
                        while pos > 0 && best[pos - 1] > d2 {
                            best[pos] = best[pos - 1];
                            pos -= 1;
                        }
                        best[pos] = d2;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, best);
                if diff * diff < best[best.len() - 1] {
                    self.search(far, q, skip, best);
                }
            }
        }
    }
}

fn ln_unit_ball_volume(d: usize) -> f64 {
    let h = 0.5 * d as f64;
    h * PI.ln() - statrs::function::gamma::ln_gamma(h + 1.0)
}

fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

/// Weights `(w1, w2)` on the k and 2k estimates cancelling the `(k/n)^{2/d}` bias.
fn bias_weights(k: usize, d: usize) -> (f64, f64) {
    let e = 2.0 / d as f64;
    let lg = statrs::function::gamma::ln_gamma;
    let g1 = (lg(k as f64 + e) - lg(k as f64)).exp();
    let g2 = (lg(2.0 * k as f64 + e) - lg(2.0 * k as f64)).exp();
    let w1 = g2 / (g2 - g1);
    (w1, 1.0 - w1)
}

/// Point estimate in bits, without a standard error.
fn kl_point(points: &PointSet, k: usize, bias_correction: bool) -> f64 {
    let n = points.len();
    let d = points.dim;
    let tree = KdTree::build(points);
    let kk = if bias_correction { 2 * k } else { k };
    let sums: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nb = tree.knn(i, kk);
            (0.5 * nb[k - 1].ln(), 0.5 * nb[kk - 1].ln())
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let base = digamma(n as f64) + ln_unit_ball_volume(d);
    let h_k = base - digamma(k as f64) + d as f64 * s1 / n as f64;
    if !bias_correction {
        return nats_to_bits(h_k);
    }
    let h_2k = base - digamma(kk as f64) + d as f64 * s2 / n as f64;
    let (w1, w2) = bias_weights(k, d);
    nats_to_bits(w1 * h_k + w2 * h_2k)
}

/// Reject zero-variance coordinates and separate exact duplicates.
fn prepare(points: &PointSet, k: usize, min_n: usize) -> Result<PointSet> {
    let n = points.len();
    if k == 0 {
        return domain("k must be at least 1");
    }
    if n < min_n.max(2 * k + 2) {
        return domain(format!("need at least {} samples, got {n}", min_n.max(2 * k + 2)));
    }
    let d = points.dim;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(points.point(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for ((s, m), v) in sd.iter_mut().zip(&mean).zip(points.point(i)) {
            *s += (v - m) * (v - m);
        }
    }
    for (axis, s) in sd.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        if !(*s > 0.0) {
            return Err(Error::RankDeficient(format!("coordinate {axis} has zero variance")));
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        points.point(a).iter().zip(points.point(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = points.clone();
    let mut rng = stream_rng(0x6a17, 0);
    for w in idx.windows(2) {
        if points.point(w[0]) == points.point(w[1]) {
            let j = w[1];
            for (axis, s) in sd.iter().enumerate() {
                out.data[j * d + axis] += 1e-12 * s * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
    }
    Ok(out)
}

/// Entropy estimate in bits with the default settings and neighbour count `k`.
pub fn knn_entropy(samples: &PointSet, k: usize) -> Result<EntropyEstimate> {
    knn_entropy_with(samples, &KnnConfig { k, ..KnnConfig::default() })
}

pub fn knn_entropy_with(samples: &PointSet, cfg: &KnnConfig) -> Result<EntropyEstimate> {
    if cfg.folds < 10 {
        return domain(format!("need at least 10 folds, got {}", cfg.folds));
    }
    let points = prepare(samples, cfg.k, 100)?;
    let n = points.len();
    let value = kl_point(&points, cfg.k, cfg.bias_correction);
    let fold = n / cfg.folds;
    if fold < 2 * cfg.k + 2 {
        return domain(format!("{n} samples are too few for {} folds", cfg.folds));
    }
    let parts: Vec<f64> = (0..cfg.folds)
        .map(|f| kl_point(&points.slice(f * fold, (f + 1) * fold), cfg.k, cfg.bias_correction))
        .collect();
    let mean = parts.iter().sum::<f64>() / parts.len() as f64;
    let var = parts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (parts.len() - 1) as f64;
    Ok(EntropyEstimate {
        value,
        std_err: (var / parts.len() as f64).sqrt(),
        k: cfg.k,
        n,
        dim: points.dim,
    })
}

/// `E_x[h(Y | X = x)]` by nested sampling: one entropy estimate per outer draw.
///
/// `y_given_x` must return `n_inner` conditional samples as a [`PointSet`].
pub fn conditional_entropy<X, F>(
    y_given_x: F,
    x_samples: &[X],
    n_inner: usize,
    k: usize,
    seed: u64,
) -> Result<EntropyEstimate>
where
    X: Sync,
    F: Fn(&X, usize, &mut ChaCha8Rng) -> PointSet + Sync,
{
    let n_outer = x_samples.len();
    if n_outer < 50 {
        return domain(format!("need at least 50 outer draws, got {n_outer}"));
    }
    let inner: Vec<Result<(f64, usize)>> = x_samples
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let mut rng = stream_rng(seed, j as u64);
            let pts = prepare(&y_given_x(x, n_inner, &mut rng), k, 100)?;
            Ok((kl_point(&pts, k, true), pts.dim))
        })
        .collect();
    let inner = inner.into_iter().collect::<Result<Vec<_>>>()?;
    let dim = inner[0].1;
    let mean = inner.iter().map(|v| v.0).sum::<f64>() / n_outer as f64;
    let var = inner.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n_outer - 1) as f64;
    Ok(EntropyEstimate { value: mean, std_err: (var / n_outer as f64).sqrt(), k, n: n_outer * n_inner, dim })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    /// Joint draws for the marginal `h(Y)`.
    pub n_marginal: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub knn: KnnConfig,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { n_marginal: 20_000, n_outer: 50, n_inner: 2_000, knn: KnnConfig::default() }
    }
}

/// `I(X; Y) = h(Y) - h(Y|X)` from a sampler of `X` and a conditional sampler of `Y`.
pub fn mutual_information<X, FX, FY>(sample_x: FX, y_given_x: FY, cfg: &MiConfig, seed: u64) -> Result<EntropyEstimate>
where
    X: Sync,
    FX: Fn(&mut ChaCha8Rng) -> X,
    FY: Fn(&X, usize, &mut ChaCha8Rng) -> PointSet + Sync,
{
    let mut rng = stream_rng(seed, u64::MAX);
    let mut joint = Vec::new();
    let mut dim = 0;
    for _ in 0..cfg.n_marginal {
        let x = sample_x(&mut rng);
        let y = y_given_x(&x, 1, &mut rng);
        dim = y.dim();
        joint.extend_from_slice(&y.data);
    }
    let h_y = knn_entropy_with(&PointSet::new(dim.max(1), joint)?, &cfg.knn)?;
    let xs: Vec<X> = (0..cfg.n_outer).map(|_| sample_x(&mut rng)).collect();
    let h_y_x = conditional_entropy(y_given_x, &xs, cfg.n_inner, cfg.knn.k, seed ^ 0x9e37_79b9)?;
    Ok(h_y.minus(&h_y_x))
}

/// Coordinates used for entropy estimation of complex vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Real and imaginary parts, `2n` real dimensions.
    Cartesian,
    /// Squared magnitudes, `n` dimensions; valid when every component has an
    /// independent uniform phase, where `h(Y) = h(|Y|²) + n log2 π`.
    SquaredMagnitude,
}

/// Entropy in bits of the columns of `y` (`n × N`), pre-scaled by `1/sqrt(scale)`.
///
/// The log-Jacobian of the scaling, and for [`Representation::SquaredMagnitude`]
/// the phase term `n log2 π`, are added back.
pub fn complex_entropy(y: &DMatrix<Complex64>, repr: Representation, scale: f64, cfg: &KnnConfig) -> Result<EntropyEstimate> {
    if !(scale > 0.0) {
        return domain("scale must be positive");
    }
    let n = y.nrows();
    let cols = y.ncols();
    let (dim, data) = match repr {
        Representation::Cartesian => {
            let s = 1.0 / scale.sqrt();
            let mut data = Vec::with_capacity(2 * n * cols);
            for t in 0..cols {
                for v in y.column(t).iter() {
                    data.push(v.re * s);
                    data.push(v.im * s);
                }
            }
            (2 * n, data)
        }
        Representation::SquaredMagnitude => {
            let mut data = Vec::with_capacity(n * cols);
            for t in 0..cols {
                data.extend(y.column(t).iter().map(|v| v.norm_sqr() / scale));
            }
            (n, data)
        }
    };
    let est = knn_entropy_with(&PointSet::new(dim, data)?, cfg)?;
    let phase = if repr == Representation::SquaredMagnitude { n as f64 * PI.log2() } else { 0.0 };
    Ok(EntropyEstimate { dim: 2 * n, ..est.shifted(n as f64 * scale.log2() + phase) })
}
