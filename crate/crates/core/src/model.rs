//! Hyperparameters, the count heuristics for experts and pseudo-points,
//! and a sampler for the full generative process.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{select_rows, Dataset, LabelMatrix};
use crate::error::{EsmcError, Result};
use crate::experts::{sample_label, ExpertConfig};
use crate::kernel::{bandwidth_heuristic, KernelConfig};
use crate::sparse_gp::{PseudoSet, SparseGpLayer};

pub const MAX_EXPERTS: usize = 100;
/// Lower bound on the latent-space kernel bandwidth.
pub const LATENT_BANDWIDTH_FLOOR: f64 = 1e-3;

/// All model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Latent dimension `L`.
    pub latent_dim: usize,
    pub experts: ExpertConfig,
    pub num_pseudo_c: usize,
    pub num_pseudo_z: usize,
    /// Feature-space bandwidth; `None` means twice the mean pairwise distance.
    pub sigma_c: Option<f64>,
    /// Latent-space bandwidth; `None` recomputes it from the latent pseudo-points.
    pub sigma_z: Option<f64>,
    pub alpha_c: f64,
    pub alpha_z: f64,
    pub beta_c: f64,
    pub beta_z: f64,
    pub gamma_c: f64,
    pub gamma_z: f64,
    /// Floor for `E[z]` on observed positives; `None` means `5 / lambda`.
    pub z_clamp: Option<f64>,
    pub max_iters: usize,
    pub elbo_tol: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            latent_dim: 20,
            experts: ExpertConfig {
                num_experts: 1,
                lambda: 1.0,
            },
            num_pseudo_c: 10,
            num_pseudo_z: 10,
            sigma_c: None,
            sigma_z: None,
            alpha_c: 0.1,
            alpha_z: 0.1,
            beta_c: 0.1,
            beta_z: 0.1,
            gamma_c: 1e-3,
            gamma_z: 1e-3,
            z_clamp: None,
            max_iters: 50,
            elbo_tol: 1e-5,
        }
    }
}

impl HyperParams {
    /// Defaults with `B` and `M` set from the data by [`choose_num_experts`]
    /// and [`choose_num_pseudo`], and `L = min(20, K)`.
    pub fn for_data(data: &Dataset) -> Result<Self> {
        let b = choose_num_experts(&data.labels)?;
        let m = choose_num_pseudo(data.len());
        Ok(Self {
            latent_dim: 20.min(data.num_labels()).max(1),
            experts: ExpertConfig {
                num_experts: b,
                lambda: 1.0,
            },
            num_pseudo_c: m,
            num_pseudo_z: m,
            ..Self::default()
        })
    }

    pub fn z_clamp_value(&self) -> f64 {
        self.z_clamp.unwrap_or(5.0 / self.experts.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.experts.validate()?;
        if self.latent_dim == 0 {
            return Err(EsmcError::invalid("latent dimension must be at least 1"));
        }
        if self.num_pseudo_c == 0 || self.num_pseudo_z == 0 {
            return Err(EsmcError::invalid("pseudo-point counts must be at least 1"));
        }
        for (name, v) in [
            ("alpha_c", self.alpha_c),
            ("alpha_z", self.alpha_z),
            ("beta_c", self.beta_c),
            ("beta_z", self.beta_z),
            ("elbo_tol", self.elbo_tol),
            ("z_clamp", self.z_clamp_value()),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EsmcError::invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("gamma_c", self.gamma_c), ("gamma_z", self.gamma_z)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(EsmcError::invalid(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("sigma_c", self.sigma_c), ("sigma_z", self.sigma_z)] {
            if let Some(s) = v {
                KernelConfig::new(s)
                    .map_err(|_| EsmcError::invalid(format!("{name} must be positive, got {s}")))?;
            }
        }
        Ok(())
    }
}

/// `min(floor(#zeros / #ones), 100)`, at least 1.
pub fn choose_num_experts(labels: &LabelMatrix) -> Result<usize> {
    let ones = labels.count_ones();
    if ones == 0 {
        return Err(EsmcError::degenerate(
            "label matrix has no positive entries",
        ));
    }
    let zeros = labels.rows() * labels.cols() - ones;
    Ok((zeros / ones).clamp(1, MAX_EXPERTS))
}

/// Pseudo-point count for `n` training instances.
///
/// `ceil(0.1 n)` below 10000, `ceil(0.01 n)` below 20000, and 400 from 20000 on.
pub fn choose_num_pseudo(n: usize) -> usize {
    if n < 10_000 {
        n.div_ceil(10).max(1)
    } else if n < 20_000 {
        n.div_ceil(100)
    } else {
        400
    }
}

/// Latent bandwidth from the current latent pseudo-points, floored.
pub fn latent_bandwidth(points: &DMatrix<f64>, seed: u64) -> f64 {
    bandwidth_heuristic(points, seed)
        .map(|s| s.max(LATENT_BANDWIDTH_FLOOR))
        .unwrap_or(LATENT_BANDWIDTH_FLOOR)
}

pub(crate) fn gaussian_matrix(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    scale: f64,
) -> DMatrix<f64> {
    // Filled row by row so the stream order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v: f64 = rng.sample(StandardNormal);
            m[(i, j)] = scale * v;
        }
    }
    m
}

/// Draws pseudo-values from the layer prior `N(0, K(S,S) + alpha^2 I)`, one column per output.
fn sample_pseudo_values(
    pseudo: &PseudoSet,
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let f = pseudo.factor()?;
    let eps = gaussian_matrix(rng, pseudo.len(), out_dim, 1.0);
    Ok(f.chol.l() * eps)
}

/// Samples a synthetic dataset from the generative model.
///
/// Features are i.i.d. standard normal. Returns the dataset (labeled rows
/// first, labels only for those) and the suitability matrix `Z` for every row.
pub fn sample_dataset(
    hp: &HyperParams,
    n_labeled: usize,
    n_unlabeled: usize,
    num_features: usize,
    num_labels: usize,
    seed: u64,
) -> Result<(Dataset, DMatrix<f64>)> {
    hp.validate()?;
    let n = n_labeled + n_unlabeled;
    if n == 0 || num_features == 0 || num_labels == 0 {
        return Err(EsmcError::invalid("sample_dataset: sizes must be positive"));
    }
    if hp.num_pseudo_c > n || hp.num_pseudo_z > n {
        return Err(EsmcError::invalid(format!(
            "sample_dataset: {} / {} pseudo-points for {n} instances",
            hp.num_pseudo_c, hp.num_pseudo_z
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, n, num_features, 1.0);

    let sigma_c = match hp.sigma_c {
        Some(s) => s,
        None if n >= 2 => bandwidth_heuristic(&x, seed)?,
        None => 1.0,
    };
    let mut idx = sample(&mut rng, n, hp.num_pseudo_c).into_vec();
    idx.sort_unstable();
    let pseudo_c = PseudoSet::new(
        select_rows(&x, &idx),
        KernelConfig::new(sigma_c)?,
        hp.alpha_c,
    )?;
    let u_c = sample_pseudo_values(&pseudo_c, hp.latent_dim, &mut rng)?;
    let mut layer_c = SparseGpLayer::from_prior(pseudo_c, hp.latent_dim, hp.beta_c, hp.gamma_c)?;
    layer_c.value_mean = u_c;

    let c_hat = layer_c.predict_mean(&x)? + gaussian_matrix(&mut rng, n, hp.latent_dim, hp.beta_c);
    let c = c_hat + gaussian_matrix(&mut rng, n, hp.latent_dim, hp.gamma_c);

    let s_z = if hp.num_pseudo_z == hp.num_pseudo_c {
        layer_c.predict_mean(&layer_c.pseudo.points)?
    } else {
        let mut idx = sample(&mut rng, n, hp.num_pseudo_z).into_vec();
        idx.sort_unstable();
        select_rows(&c, &idx)
    };
    let sigma_z = hp.sigma_z.unwrap_or_else(|| latent_bandwidth(&s_z, seed));
    let pseudo_z = PseudoSet::new(s_z, KernelConfig::new(sigma_z)?, hp.alpha_z)?;
    let u_z = sample_pseudo_values(&pseudo_z, num_labels, &mut rng)?;
    let mut layer_z = SparseGpLayer::from_prior(pseudo_z, num_labels, hp.beta_z, hp.gamma_z)?;
    layer_z.value_mean = u_z;

    let z_hat = layer_z.predict_mean(&c)? + gaussian_matrix(&mut rng, n, num_labels, hp.beta_z);
    let z = z_hat + gaussian_matrix(&mut rng, n, num_labels, hp.gamma_z);

    let mut labels = LabelMatrix::new(n_labeled, num_labels);
    for i in 0..n_labeled {
        for k in 0..num_labels {
            labels.set(i, k, sample_label(z[(i, k)], &hp.experts, &mut rng));
        }
    }
    Ok((Dataset::new(x, labels)?, z))
}
