//! Shared fixtures for the benchmarks.

use esmc_core::model::{sample_dataset, HyperParams};
use esmc_core::{Dataset, ExpertConfig};
use nalgebra::DMatrix;

/// A sampled dataset with `n` labeled rows, plus the hyperparameters used.
pub fn synthetic(n: usize, features: usize, labels: usize, seed: u64) -> (Dataset, HyperParams) {
    let hp = HyperParams {
        latent_dim: 3.min(labels),
        experts: ExpertConfig::new(2, 4.0).expect("valid experts"),
        num_pseudo_c: 20.min(n),
        num_pseudo_z: 20.min(n),
        ..HyperParams::default()
    };
    let (data, _) = sample_dataset(&hp, n, 0, features, labels, seed).expect("sampling succeeds");
    (data, hp)
}

/// A deterministic dense matrix with entries in [-1, 1).
pub fn grid(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| {
        (((i * 31 + j * 17) % 97) as f64 / 48.5) - 1.0
    })
}
