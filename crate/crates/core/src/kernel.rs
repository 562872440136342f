//! Squared-exponential (RBF) kernel and Gram matrix helpers.
//!
//! Point sets are stored as matrices with one point per row.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsmcError, Result};

/// Point sets larger than this are subsampled before the pairwise-distance heuristic.
pub const HEURISTIC_SUBSAMPLE: usize = 2000;

/// Bandwidth of an RBF kernel `exp(-|a-b|^2 / (2 s^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(EsmcError::invalid(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub(crate) fn at_sq_dist(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

#[inline]
fn sq_dist_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..a.ncols() {
        let diff = a[(i, d)] - b[(j, d)];
        acc += diff * diff;
    }
    acc
}

/// Kernel value between two vectors.
pub fn rbf(a: &[f64], b: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EsmcError::invalid(format!(
            "rbf: dimension mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(cfg.at_sq_dist(sq))
}

/// Symmetric Gram matrix of the rows of `points`. Diagonal is exactly one.
pub fn gram(points: &DMatrix<f64>, cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if n == 0 {
        return Err(EsmcError::invalid("gram: empty point set"));
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = cfg.at_sq_dist(sq_dist_rows(points, i, points, j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Kernel values between every row of `rows` and every row of `cols`.
pub fn cross_gram(
    rows: &DMatrix<f64>,
    cols: &DMatrix<f64>,
    cfg: &KernelConfig,
) -> Result<DMatrix<f64>> {
    if rows.ncols() != cols.ncols() && rows.nrows() > 0 && cols.nrows() > 0 {
        return Err(EsmcError::invalid(format!(
            "cross_gram: dimension mismatch ({} vs {})",
            rows.ncols(),
            cols.ncols()
        )));
    }
    let mut k = DMatrix::zeros(rows.nrows(), cols.nrows());
    for i in 0..rows.nrows() {
        for j in 0..cols.nrows() {
            k[(i, j)] = cfg.at_sq_dist(sq_dist_rows(rows, i, cols, j));
        }
    }
    Ok(k)
}

/// Twice the mean Euclidean distance over all unordered pairs of rows.
///
/// Sets with more than [`HEURISTIC_SUBSAMPLE`] rows are subsampled with a
/// ChaCha8 stream seeded by `seed`; smaller sets ignore the seed.
pub fn bandwidth_heuristic(points: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(EsmcError::degenerate(
            "bandwidth heuristic needs at least two points",
        ));
    }
    let idx: Vec<usize> = if n > HEURISTIC_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, HEURISTIC_SUBSAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[..a] {
            total += sq_dist_rows(points, i, points, j).sqrt();
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    if mean.is_nan() || mean <= 0.0 || !mean.is_finite() {
        return Err(EsmcError::degenerate(
            "bandwidth heuristic: all points identical (mean distance 0)",
        ));
    }
    Ok(2.0 * mean)
}
