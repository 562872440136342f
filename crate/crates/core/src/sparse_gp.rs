//! Pseudo-input sparse GP layer.
//!
//! A layer carries `M` pseudo-points `S`, and a Gaussian posterior over the
//! function values `U` (one column per output) at those points. The prior
//! on each column is `N(0, K(S,S) + alpha^2 I)`; an input `x` maps to the
//! conditional mean `k(x,S) (K(S,S) + alpha^2 I)^-1 u`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{EsmcError, Result};
use crate::kernel::{cross_gram, gram, KernelConfig};

/// Diagonal jitter ladder used by every symmetric factorization.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// A Cholesky factorization along with the diagonal jitter that made it succeed.
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factorizes a symmetric matrix, escalating diagonal jitter through [`JITTER_LADDER`].
pub fn jittered_cholesky(matrix: &DMatrix<f64>, context: &str) -> Result<JitteredCholesky> {
    if !matrix.is_square() {
        return Err(EsmcError::invalid(format!(
            "{context}: matrix is {}x{}, expected square",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(EsmcError::Numerical {
            context: format!("{context}: non-finite entry"),
            jitter: 0.0,
        });
    }
    for &jitter in &JITTER_LADDER {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Ok(JitteredCholesky { chol, jitter });
        }
    }
    Err(EsmcError::Numerical {
        context: context.to_string(),
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Solution of a jittered symmetric solve.
#[derive(Debug, Clone)]
pub struct JitteredSolve {
    pub solution: DMatrix<f64>,
    pub jitter: f64,
}

/// Solves `matrix * X = rhs` for a symmetric positive (semi)definite `matrix`.
pub fn chol_solve(matrix: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<JitteredSolve> {
    if rhs.nrows() != matrix.nrows() {
        return Err(EsmcError::invalid(format!(
            "chol_solve: rhs has {} rows, matrix has {}",
            rhs.nrows(),
            matrix.nrows()
        )));
    }
    let f = jittered_cholesky(matrix, "chol_solve")?;
    Ok(JitteredSolve {
        solution: f.chol.solve(rhs),
        jitter: f.jitter,
    })
}

/// Pseudo-points together with their kernel and input noise `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSet {
    pub points: DMatrix<f64>,
    pub kernel: KernelConfig,
    pub input_noise: f64,
}

impl PseudoSet {
    pub fn new(points: DMatrix<f64>, kernel: KernelConfig, input_noise: f64) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(EsmcError::invalid("pseudo set needs at least one point"));
        }
        if !(input_noise.is_finite() && input_noise > 0.0) {
            return Err(EsmcError::invalid(format!(
                "pseudo input noise must be positive, got {input_noise}"
            )));
        }
        Ok(Self {
            points,
            kernel,
            input_noise,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// `K(S,S) + alpha^2 I`, the prior covariance of each output column of `U`.
    pub fn prior_covariance(&self) -> Result<DMatrix<f64>> {
        let mut k = gram(&self.points, &self.kernel)?;
        let a2 = self.input_noise * self.input_noise;
        for i in 0..k.nrows() {
            k[(i, i)] += a2;
        }
        Ok(k)
    }

    /// Factorizes the prior covariance once so projections can reuse it.
    pub fn factor(&self) -> Result<PriorFactor> {
        let cov = self.prior_covariance()?;
        let f = jittered_cholesky(&cov, "pseudo prior covariance")?;
        Ok(PriorFactor {
            cov,
            chol: f.chol,
            jitter: f.jitter,
        })
    }

    /// Rows of the projection matrix `k(x,S) (K(S,S)+alpha^2 I)^-1`.
    pub fn projection(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.factor()?.projection(self, inputs)
    }
}

/// Cached factorization of a pseudo prior covariance.
pub struct PriorFactor {
    pub cov: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl PriorFactor {
    pub fn precision(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    /// Projection rows for `inputs` given the set this factor was built from.
    pub fn projection(&self, pseudo: &PseudoSet, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() > 0 && inputs.ncols() != pseudo.dim() {
            return Err(EsmcError::invalid(format!(
                "projection: inputs have dimension {}, pseudo-points {}",
                inputs.ncols(),
                pseudo.dim()
            )));
        }
        let kxs = cross_gram(inputs, &pseudo.points, &pseudo.kernel)?;
        // (K_ss^-1 K_sx)^T, using the symmetry of K_ss.
        Ok(self.chol.solve(&kxs.transpose()).transpose())
    }
}

/// Inverse of the pseudo prior covariance.
pub fn prior_precision(pseudo: &PseudoSet) -> Result<DMatrix<f64>> {
    Ok(pseudo.factor()?.precision())
}

/// One stochastic layer: pseudo-set plus Gaussian posterior over its pseudo-values.
///
/// Every output column shares the covariance `value_cov_factor * value_cov_factor^T`;
/// only the means differ.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGpLayer {
    pub pseudo: PseudoSet,
    pub out_dim: usize,
    /// `M x out_dim` posterior means.
    pub value_mean: DMatrix<f64>,
    /// Lower-triangular factor of the shared `M x M` posterior covariance.
    pub value_cov_factor: DMatrix<f64>,
    /// `beta`, the observation noise scale.
    pub obs_noise: f64,
    /// `gamma`, the residual noise scale.
    pub residual_noise: f64,
}

impl SparseGpLayer {
    /// A layer whose pseudo-value posterior equals its prior.
    pub fn from_prior(
        pseudo: PseudoSet,
        out_dim: usize,
        obs_noise: f64,
        residual_noise: f64,
    ) -> Result<Self> {
        if out_dim == 0 {
            return Err(EsmcError::invalid(
                "layer output dimension must be positive",
            ));
        }
        if !(obs_noise.is_finite() && obs_noise > 0.0) {
            return Err(EsmcError::invalid(format!(
                "observation noise must be positive, got {obs_noise}"
            )));
        }
        if !(residual_noise.is_finite() && residual_noise >= 0.0) {
            return Err(EsmcError::invalid(format!(
                "residual noise must be nonnegative, got {residual_noise}"
            )));
        }
        let factor = pseudo.factor()?;
        let m = pseudo.len();
        Ok(Self {
            value_mean: DMatrix::zeros(m, out_dim),
            value_cov_factor: factor.chol.l(),
            pseudo,
            out_dim,
            obs_noise,
            residual_noise,
        })
    }

    /// Effective per-coordinate noise variance `beta^2 + gamma^2` of the collapsed layer.
    pub fn noise_var(&self) -> f64 {
        self.obs_noise * self.obs_noise + self.residual_noise * self.residual_noise
    }

    pub fn value_cov(&self) -> DMatrix<f64> {
        &self.value_cov_factor * self.value_cov_factor.transpose()
    }

    pub fn projection(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.pseudo.projection(inputs)
    }

    /// Posterior mean of the layer's function at each input row.
    pub fn predict_mean(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.projection(inputs)? * &self.value_mean)
    }
}
