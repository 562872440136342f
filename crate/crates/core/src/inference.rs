//! Coordinate-ascent variational training.
//!
//! The variational family is
//! `q(U_c) q(U_z) q(C) q(Z) q(E)` with
//!
//! * `q(U_c)`, `q(U_z)`: Gaussians over pseudo-values, one mean per output
//!   column and a covariance shared within each layer;
//! * `q(C)`: a point mass at `c_mean`, moved by backtracking gradient ascent;
//! * `q(Z)`: independent Gaussians per cell;
//! * `q(E)`: Bernoulli responsibilities for the experts of labeled cells.
//!
//! The intermediate noiseless layer outputs are integrated out, so each
//! layer contributes a Gaussian likelihood with variance `beta^2 + gamma^2`
//! around its projected mean. The sigmoid in the expert likelihood is
//! replaced by its quadratic-exponential lower bound, which makes every
//! block except `q(C)` conjugate.

use std::f64::consts::{E, PI};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{select_rows, Dataset};
use crate::error::{EsmcError, Result};
use crate::experts::{
    expected_log_bound, expert_responsibilities, tau, update_xi_with, ExpertConfig, XiRule,
};
use crate::kernel::{bandwidth_heuristic, KernelConfig};
use crate::model::{gaussian_matrix, latent_bandwidth, HyperParams};
use crate::predict::TrainedModel;
use crate::sparse_gp::{jittered_cholesky, PseudoSet, SparseGpLayer};

/// Standard deviation of the initial latent positions of unlabeled rows.
const UNLABELED_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub seed: u64,
    pub xi_rule: XiRule,
    /// Initial gradient step for `q(C)`, in units of the c-layer noise variance.
    pub c_step: f64,
    /// Maximum number of step halvings per row.
    pub c_backtracks: usize,
    /// Move the latent pseudo-points to `E[f_c(S_c)]` after every sweep.
    pub propagate_pseudo: bool,
}

impl TrainConfig {
    pub fn new(hp: HyperParams) -> Self {
        Self {
            hp,
            seed: 0,
            xi_rule: XiRule::Corrected,
            c_step: 1.0,
            c_backtracks: 20,
            propagate_pseudo: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.c_step.is_finite() && self.c_step > 0.0) {
            return Err(EsmcError::invalid(format!(
                "c_step must be positive, got {}",
                self.c_step
            )));
        }
        if self.propagate_pseudo && self.hp.num_pseudo_c != self.hp.num_pseudo_z {
            return Err(EsmcError::invalid(format!(
                "pseudo propagation needs equal pseudo counts, got {} and {}",
                self.hp.num_pseudo_c, self.hp.num_pseudo_z
            )));
        }
        Ok(())
    }
}

/// Bound parameters `xi`, one per labeled cell, kept nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub xi: DMatrix<f64>,
}

/// Which stochastic layer a block update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    C,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// `n x L` point estimate of the latent representation.
    pub c_mean: DMatrix<f64>,
    /// `n x K` means of `q(Z)`.
    pub z_mean: DMatrix<f64>,
    /// `n x K` variances of `q(Z)`.
    pub z_var: DMatrix<f64>,
    pub layer_c: SparseGpLayer,
    pub layer_z: SparseGpLayer,
    /// `n_labeled x K` responsibility of the first expert.
    pub resp_first: DMatrix<f64>,
    /// `n_labeled x K` responsibility of each remaining expert.
    pub resp_rest: DMatrix<f64>,
    pub bound: BoundParams,
    pub experts: ExpertConfig,
    pub z_clamp: f64,
    pub elbo_trace: Vec<f64>,
}

/// One line of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub iteration: usize,
    pub elbo: f64,
    pub seconds: f64,
    /// Whether the latent pseudo-points moved during this sweep.
    pub propagated: bool,
}

/// Top-`l` principal projection of the column-centered rows of `y`.
pub fn principal_projection(y: &DMatrix<f64>, l: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = y.ncols();
    if l > k {
        return Err(EsmcError::invalid(format!(
            "latent dimension {l} exceeds K={k}"
        )));
    }
    let n = y.nrows().max(1) as f64;
    let mean = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let scatter = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(scatter / n);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(k, l);
    for (j, &src) in order.iter().take(l).enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let mut best = 0;
        for i in 0..k {
            if col[i].abs() > col[best].abs() + 1e-12 {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col = -col;
        }
        basis.set_column(j, &col);
    }
    Ok((&centered * &basis, basis))
}

fn feature_bandwidth(hp: &HyperParams, x: &DMatrix<f64>, seed: u64) -> Result<f64> {
    match hp.sigma_c {
        Some(s) => Ok(s),
        None => bandwidth_heuristic(x, seed),
    }
}

/// Builds the starting state: pseudo-points, PCA latent positions, clamped
/// suitabilities, a fitted `q(U_c)` and latent pseudo-points by propagation.
pub fn init_state(data: &Dataset, cfg: &TrainConfig) -> Result<VariationalState> {
    cfg.validate()?;
    let hp = &cfg.hp;
    let n = data.len();
    let nl = data.n_labeled();
    let k = data.num_labels();
    let l = hp.latent_dim;
    if n == 0 {
        return Err(EsmcError::invalid("training set is empty"));
    }
    if hp.num_pseudo_c > n || hp.num_pseudo_z > n {
        return Err(EsmcError::invalid(format!(
            "{} / {} pseudo-points requested for {n} instances",
            hp.num_pseudo_c, hp.num_pseudo_z
        )));
    }
    if l > k {
        return Err(EsmcError::invalid(format!(
            "latent dimension {l} exceeds K={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sigma_c = feature_bandwidth(hp, &data.features, cfg.seed)?;
    let mut idx = sample(&mut rng, n, hp.num_pseudo_c).into_vec();
    idx.sort_unstable();
    let pseudo_c = PseudoSet::new(
        select_rows(&data.features, &idx),
        KernelConfig::new(sigma_c)?,
        hp.alpha_c,
    )?;

    let mut c_mean = gaussian_matrix(&mut rng, n, l, UNLABELED_INIT_SCALE);
    if nl > 0 {
        let (proj, _) = principal_projection(&data.labels.to_real(), l)?;
        c_mean.rows_mut(0, nl).copy_from(&proj);
    }

    let layer_c = SparseGpLayer::from_prior(pseudo_c, l, hp.beta_c, hp.gamma_c)?;
    let experts = hp.experts;
    let z_clamp = hp.z_clamp_value();
    let mut z_mean = DMatrix::zeros(n, k);
    for i in 0..nl {
        for j in 0..k {
            z_mean[(i, j)] = if data.labels.get(i, j) { z_clamp } else { -1.0 };
        }
    }

    // Placeholder z-layer; replaced once q(U_c) is fitted.
    let placeholder = PseudoSet::new(DMatrix::zeros(1, l), KernelConfig::new(1.0)?, hp.alpha_z)?;
    let mut state = VariationalState {
        c_mean,
        z_mean,
        z_var: DMatrix::from_element(n, k, 1.0),
        layer_c,
        layer_z: SparseGpLayer::from_prior(placeholder, k, hp.beta_z, hp.gamma_z)?,
        resp_first: DMatrix::zeros(nl, k),
        resp_rest: DMatrix::zeros(nl, k),
        bound: BoundParams {
            xi: DMatrix::zeros(nl, k),
        },
        experts,
        z_clamp,
        elbo_trace: Vec::new(),
    };
    if nl > 0 && nl < n {
        // Unlabeled rows start at the prediction of a labeled-only fit.
        let labeled_x = data.features.rows(0, nl).clone_owned();
        let labeled_c = state.c_mean.rows(0, nl).clone_owned();
        fit_layer(&mut state.layer_c, &labeled_x, &labeled_c, "q(U_c) init")?;
        let unlabeled_x = data.features.rows(nl, n - nl).clone_owned();
        let pred = state.layer_c.predict_mean(&unlabeled_x)?;
        state.c_mean.rows_mut(nl, n - nl).copy_from(&pred);
    }
    update_q_u(&mut state, data, Layer::C)?;

    let s_z = if hp.num_pseudo_z == hp.num_pseudo_c {
        state.layer_c.predict_mean(&state.layer_c.pseudo.points)?
    } else {
        let mut idx = sample(&mut rng, n, hp.num_pseudo_z).into_vec();
        idx.sort_unstable();
        select_rows(&state.c_mean, &idx)
    };
    let sigma_z = hp
        .sigma_z
        .unwrap_or_else(|| latent_bandwidth(&s_z, cfg.seed));
    let pseudo_z = PseudoSet::new(s_z, KernelConfig::new(sigma_z)?, hp.alpha_z)?;
    state.layer_z = SparseGpLayer::from_prior(pseudo_z, k, hp.beta_z, hp.gamma_z)?;

    update_responsibilities(&mut state, data);
    update_bound_params(&mut state, data, cfg.xi_rule);
    let e = elbo(&state, data)?;
    state.elbo_trace.push(e);
    Ok(state)
}

/// Refreshes expert responsibilities from the current `q(Z)` means.
pub fn update_responsibilities(state: &mut VariationalState, data: &Dataset) {
    for i in 0..data.n_labeled() {
        for k in 0..data.num_labels() {
            let (r1, rest) = expert_responsibilities(
                data.labels.get(i, k),
                state.z_mean[(i, k)],
                &state.experts,
            );
            state.resp_first[(i, k)] = r1;
            state.resp_rest[(i, k)] = rest;
        }
    }
}

/// Refreshes the bound parameters from `q(Z)`.
pub fn update_bound_params(state: &mut VariationalState, data: &Dataset, rule: XiRule) {
    for i in 0..data.n_labeled() {
        for k in 0..data.num_labels() {
            state.bound.xi[(i, k)] = update_xi_with(
                rule,
                state.z_mean[(i, k)],
                state.z_var[(i, k)],
                &state.experts,
            );
        }
    }
}

/// Closed-form update of `q(Z)` under the sigmoid bound, followed by the
/// positive-label clamp `E[z] >= z_clamp`.
pub fn update_q_z(state: &mut VariationalState, data: &Dataset) -> Result<()> {
    let a_z = state.layer_z.projection(&state.c_mean)?;
    let path = a_z * &state.layer_z.value_mean;
    let v = state.layer_z.noise_var();
    let b = state.experts.num_experts as f64;
    let lam = state.experts.lambda;
    let nl = data.n_labeled();
    for i in 0..data.len() {
        for k in 0..data.num_labels() {
            let g = path[(i, k)];
            if i < nl {
                let xi = state.bound.xi[(i, k)];
                let precision = 1.0 / v + 2.0 * b * tau(xi) * lam * lam;
                let r = state.resp_first[(i, k)] + (b - 1.0) * state.resp_rest[(i, k)];
                let linear = g / v + lam * (r - 0.5 * b);
                let mut mean = linear / precision;
                if data.labels.get(i, k) {
                    mean = mean.max(state.z_clamp);
                }
                state.z_mean[(i, k)] = mean;
                state.z_var[(i, k)] = 1.0 / precision;
            } else {
                state.z_mean[(i, k)] = g;
                state.z_var[(i, k)] = v;
            }
        }
    }
    Ok(())
}

/// Closed-form Gaussian update of the pseudo-value posterior of one layer.
///
/// With projection rows `A`, noise variance `v` and prior covariance `K`,
/// the shared covariance is `(K^-1 + A^T A / v)^-1` and each output's mean
/// is `Sigma A^T t / v` for that output's targets `t`.
pub fn update_q_u(state: &mut VariationalState, data: &Dataset, which: Layer) -> Result<()> {
    match which {
        Layer::C => fit_layer(
            &mut state.layer_c,
            &data.features,
            &state.c_mean,
            "q(U_c) update",
        ),
        Layer::Z => {
            // Unlabeled rows have no expert factors, so their z is integrated
            // out exactly and they do not enter the z-layer.
            let nl = data.n_labeled();
            let inputs = state.c_mean.rows(0, nl).clone_owned();
            let targets = state.z_mean.rows(0, nl).clone_owned();
            fit_layer(&mut state.layer_z, &inputs, &targets, "q(U_z) update")
        }
    }
}

fn fit_layer(
    layer: &mut SparseGpLayer,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    ctx: &str,
) -> Result<()> {
    let factor = layer.pseudo.factor().map_err(|e| e.with_context(ctx))?;
    let a = factor.projection(&layer.pseudo, inputs)?;
    let v = layer.noise_var();
    let mut precision = factor.precision() + a.transpose() * &a / v;
    symmetrize(&mut precision);
    let pf = jittered_cholesky(&precision, ctx)?;
    let mut cov = pf.chol.inverse();
    symmetrize(&mut cov);
    layer.value_cov_factor = jittered_cholesky(&cov, ctx)?.chol.l();
    layer.value_mean = pf.chol.solve(&(a.transpose() * targets / v));
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Per-row quantities shared by the `q(C)` objective and its gradient.
pub struct LatentRowModel {
    targets_c: DMatrix<f64>,
    points_z: DMatrix<f64>,
    kernel_z: KernelConfig,
    prec_z: DMatrix<f64>,
    mean_z: DMatrix<f64>,
    cov_z: DMatrix<f64>,
    v_c: f64,
    v_z: f64,
    n_labeled: usize,
}

impl LatentRowModel {
    /// Snapshot of everything except `c_mean` and `q(Z)` that the row objective needs.
    pub fn new(state: &VariationalState, data: &Dataset) -> Result<Self> {
        let targets_c = state.layer_c.predict_mean(&data.features)?;
        let fz = state.layer_z.pseudo.factor()?;
        Ok(Self {
            targets_c,
            points_z: state.layer_z.pseudo.points.clone(),
            kernel_z: state.layer_z.pseudo.kernel,
            prec_z: fz.precision(),
            mean_z: state.layer_z.value_mean.clone(),
            cov_z: state.layer_z.value_cov(),
            v_c: state.layer_c.noise_var(),
            v_z: state.layer_z.noise_var(),
            n_labeled: data.n_labeled(),
        })
    }

    fn kernel_row(&self, c: &[f64]) -> DVector<f64> {
        let m = self.points_z.nrows();
        DVector::from_fn(m, |j, _| {
            let mut sq = 0.0;
            for (d, cd) in c.iter().enumerate() {
                let diff = cd - self.points_z[(j, d)];
                sq += diff * diff;
            }
            self.kernel_z.at_sq_dist(sq)
        })
    }

    /// Terms of the bound that depend on row `i`'s latent position `c`.
    ///
    /// Unlabeled rows only see the c-layer term.
    pub fn objective(&self, state: &VariationalState, i: usize, c: &[f64]) -> f64 {
        self.evaluate(state, i, c, false).0
    }

    /// Objective and its gradient with respect to `c`.
    pub fn objective_and_gradient(
        &self,
        state: &VariationalState,
        i: usize,
        c: &[f64],
    ) -> (f64, Vec<f64>) {
        self.evaluate(state, i, c, true)
    }

    fn evaluate(
        &self,
        state: &VariationalState,
        i: usize,
        c: &[f64],
        want_grad: bool,
    ) -> (f64, Vec<f64>) {
        let l = c.len();
        let kcount = self.mean_z.ncols() as f64;
        let mut obj = 0.0;
        let mut grad = vec![0.0; if want_grad { l } else { 0 }];
        for d in 0..l {
            let diff = c[d] - self.targets_c[(i, d)];
            obj -= diff * diff / (2.0 * self.v_c);
            if want_grad {
                grad[d] -= diff / self.v_c;
            }
        }
        if i >= self.n_labeled {
            return (obj, grad);
        }
        let kr = self.kernel_row(c);
        let a = &self.prec_z * &kr;
        let g = self.mean_z.tr_mul(&a);
        let resid = DVector::from_fn(g.len(), |k, _| state.z_mean[(i, k)] - g[k]);
        let sa = &self.cov_z * &a;
        obj -= resid.norm_squared() / (2.0 * self.v_z);
        obj -= kcount * a.dot(&sa) / (2.0 * self.v_z);
        if want_grad {
            let grad_a = (&self.mean_z * &resid - sa * kcount) / self.v_z;
            let grad_k = &self.prec_z * grad_a;
            let s2 = self.kernel_z.bandwidth() * self.kernel_z.bandwidth();
            for j in 0..kr.len() {
                let w = grad_k[j] * kr[j] / s2;
                for d in 0..l {
                    grad[d] += w * (self.points_z[(j, d)] - c[d]);
                }
            }
        }
        (obj, grad)
    }
}

/// One backtracking gradient step per latent row. A row moves only when its
/// local objective does not decrease. The `q(Z)` means of unlabeled rows
/// then follow the z-layer prediction at the new positions.
pub fn update_q_c(state: &mut VariationalState, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let rows = LatentRowModel::new(state, data)?;
    let l = state.c_mean.ncols();
    let step0 = cfg.c_step * rows.v_c;
    for i in 0..data.len() {
        let c: Vec<f64> = (0..l).map(|d| state.c_mean[(i, d)]).collect();
        let (obj, grad) = rows.objective_and_gradient(state, i, &c);
        if grad.iter().all(|g| *g == 0.0) {
            continue;
        }
        let mut step = step0;
        for _ in 0..=cfg.c_backtracks {
            let trial: Vec<f64> = c.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
            let t_obj = rows.objective(state, i, &trial);
            if t_obj >= obj {
                for d in 0..l {
                    state.c_mean[(i, d)] = trial[d];
                }
                break;
            }
            step *= 0.5;
        }
    }
    let nl = data.n_labeled();
    if nl < data.len() {
        let unlabeled = state.c_mean.rows(nl, data.len() - nl).clone_owned();
        let g = state.layer_z.predict_mean(&unlabeled)?;
        state.z_mean.rows_mut(nl, data.len() - nl).copy_from(&g);
    }
    Ok(())
}

/// Moves the latent pseudo-points to `E[f_c(S_c)]` and, when the latent
/// bandwidth is not fixed, recomputes it from the new points.
pub fn propagate_pseudo(state: &mut VariationalState, cfg: &TrainConfig) -> Result<()> {
    if state.layer_c.pseudo.len() != state.layer_z.pseudo.len() {
        return Err(EsmcError::invalid(
            "pseudo propagation needs equal pseudo counts",
        ));
    }
    let s_z = state.layer_c.predict_mean(&state.layer_c.pseudo.points)?;
    let sigma_z = cfg
        .hp
        .sigma_z
        .unwrap_or_else(|| latent_bandwidth(&s_z, cfg.seed));
    state.layer_z.pseudo = PseudoSet::new(
        s_z,
        KernelConfig::new(sigma_z)?,
        state.layer_z.pseudo.input_noise,
    )?;
    Ok(())
}

fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

fn layer_kl(layer: &SparseGpLayer) -> Result<f64> {
    let f = layer.pseudo.factor()?;
    let m = layer.pseudo.len() as f64;
    let lf = &layer.value_cov_factor;
    // tr(K^-1 Sigma) = ||L_K^-1 L_S||_F^2
    let whitened = f
        .chol
        .l_dirty()
        .clone()
        .solve_lower_triangular(lf)
        .ok_or_else(|| EsmcError::Numerical {
            context: "layer KL".into(),
            jitter: f.jitter,
        })?;
    let trace = whitened.norm_squared();
    let log_det_q = 2.0 * lf.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    let per_output = 0.5 * (trace - m + f.log_det() - log_det_q);
    let maha = f
        .chol
        .solve(&layer.value_mean)
        .component_mul(&layer.value_mean)
        .sum();
    Ok(layer.out_dim as f64 * per_output + 0.5 * maha)
}

/// Expected log-likelihood of `targets` (+ optional extra variances) under a
/// collapsed layer with projection rows `a`.
fn layer_expected_loglik(
    layer: &SparseGpLayer,
    a: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    extra_var: Option<&DMatrix<f64>>,
) -> f64 {
    let v = layer.noise_var();
    let pred = a * &layer.value_mean;
    let proj = a * &layer.value_cov_factor;
    let out = targets.ncols() as f64;
    let mut total = 0.0;
    for i in 0..targets.nrows() {
        let quad = proj.row(i).norm_squared();
        let mut sq = 0.0;
        for k in 0..targets.ncols() {
            let diff = targets[(i, k)] - pred[(i, k)];
            sq += diff * diff;
            if let Some(ev) = extra_var {
                sq += ev[(i, k)];
            }
        }
        total += -0.5 * out * (2.0 * PI * v).ln() - (sq + out * quad) / (2.0 * v);
    }
    total
}

/// Bounded evidence lower bound of the current state.
///
/// `q(C)` is a point mass and its (constant) entropy is left out. The
/// z-layer terms cover labeled rows only.
pub fn elbo(state: &VariationalState, data: &Dataset) -> Result<f64> {
    let mut total = -layer_kl(&state.layer_c)? - layer_kl(&state.layer_z)?;
    if data.is_empty() {
        return Ok(total);
    }
    let a_c = state.layer_c.projection(&data.features)?;
    total += layer_expected_loglik(&state.layer_c, &a_c, &state.c_mean, None);
    let nl = data.n_labeled();
    let a_z = state
        .layer_z
        .projection(&state.c_mean.rows(0, nl).clone_owned())?;
    let z_var = state.z_var.rows(0, nl).clone_owned();
    total += layer_expected_loglik(
        &state.layer_z,
        &a_z,
        &state.z_mean.rows(0, nl).clone_owned(),
        Some(&z_var),
    );
    total += z_var
        .iter()
        .map(|s| 0.5 * (2.0 * PI * E * s).ln())
        .sum::<f64>();
    total += expert_terms(state, data);
    Ok(total)
}

/// Expected bounded log-probability of the experts plus the entropy of `q(E)`.
pub fn expert_terms(state: &VariationalState, data: &Dataset) -> f64 {
    let b = state.experts.num_experts as f64;
    let lam = state.experts.lambda;
    let mut total = 0.0;
    for i in 0..data.n_labeled() {
        for k in 0..data.num_labels() {
            let mu = state.z_mean[(i, k)];
            let s = state.z_var[(i, k)];
            let r1 = state.resp_first[(i, k)];
            let rest = state.resp_rest[(i, k)];
            let r_sum = r1 + (b - 1.0) * rest;
            total += lam * mu * r_sum
                + b * expected_log_bound(mu, s, state.bound.xi[(i, k)], &state.experts);
            total += bernoulli_entropy(r1) + (b - 1.0) * bernoulli_entropy(rest);
        }
    }
    total
}

/// One full sweep in the fixed order
/// responsibilities, xi, q(Z), q(U_z), q(C), propagation, q(U_c).
pub fn sweep(state: &mut VariationalState, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    update_responsibilities(state, data);
    update_bound_params(state, data, cfg.xi_rule);
    update_q_z(state, data)?;
    update_q_u(state, data, Layer::Z)?;
    update_q_c(state, data, cfg)?;
    if cfg.propagate_pseudo {
        propagate_pseudo(state, cfg)?;
    }
    update_q_u(state, data, Layer::C)?;
    Ok(())
}

/// Runs sweeps until the relative ELBO change drops below `elbo_tol` or
/// `max_iters` sweeps have run. Returns the final state.
pub fn fit_state(
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_sweep: impl FnMut(&SweepRecord),
) -> Result<VariationalState> {
    let started = Instant::now();
    let mut state = init_state(data, cfg)?;
    on_sweep(&SweepRecord {
        iteration: 0,
        elbo: state.elbo_trace[0],
        seconds: started.elapsed().as_secs_f64(),
        propagated: false,
    });
    for it in 1..=cfg.hp.max_iters {
        sweep(&mut state, data, cfg).map_err(|e| e.with_context(&format!("sweep {it}")))?;
        let e = elbo(&state, data)?;
        let prev = *state
            .elbo_trace
            .last()
            .expect("trace starts with the initial bound");
        state.elbo_trace.push(e);
        on_sweep(&SweepRecord {
            iteration: it,
            elbo: e,
            seconds: started.elapsed().as_secs_f64(),
            propagated: cfg.propagate_pseudo,
        });
        if !e.is_finite() {
            return Err(EsmcError::Numerical {
                context: format!("sweep {it}: non-finite evidence bound"),
                jitter: 0.0,
            });
        }
        let rel = (e - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.hp.elbo_tol {
            break;
        }
    }
    Ok(state)
}

/// Trains a model and returns it along with the ELBO trace.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(TrainedModel, Vec<f64>)> {
    train_with(data, cfg, |_| {})
}

pub fn train_with(
    data: &Dataset,
    cfg: &TrainConfig,
    on_sweep: impl FnMut(&SweepRecord),
) -> Result<(TrainedModel, Vec<f64>)> {
    let state = fit_state(data, cfg, on_sweep)?;
    let model = TrainedModel::new(state.layer_c, state.layer_z, cfg.hp.clone())?;
    Ok((model, state.elbo_trace))
}
