//! Expert-based missing-label mechanism.
//!
//! Each labeled cell `(n, k)` owns `B` Bernoulli experts firing with
//! probability `sigmoid(lambda * z)`. The observed label is one when every
//! expert fires and zero when the first expert stays off; mixed outcomes
//! are conditioned away. Marginalizing the experts gives
//! `P(y = 1 | z) = p^B / (p^B + 1 - p)` with `p = sigmoid(lambda * z)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsmcError, Result};

/// Largest expert count the enumeration oracle accepts.
pub const BRUTE_FORCE_MAX_EXPERTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub num_experts: usize,
    pub lambda: f64,
}

impl ExpertConfig {
    pub fn new(num_experts: usize, lambda: f64) -> Result<Self> {
        let cfg = Self {
            num_experts,
            lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(EsmcError::invalid("number of experts must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(EsmcError::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// How the bound parameter `xi` is refreshed from `q(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XiRule {
    /// `lambda * sqrt(E[z]^2 + Var[z])`, the exact optimum of the expected bound.
    #[default]
    Corrected,
    /// `lambda * |E[z]|`, ignoring the variance of `q(z)`.
    Paper,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(2 cosh(x))`, even in `x`.
fn ln_two_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Curvature coefficient `tanh(xi/2) / (4 xi)` of the quadratic sigmoid bound,
/// continuous at `xi = 0` where it equals 1/8.
pub fn tau(xi: f64) -> f64 {
    let a = xi.abs();
    if a < 1e-4 {
        // tanh(x/2)/(4x) = 1/8 - x^2/96 + x^4/960 - ...
        let a2 = a * a;
        0.125 - a2 / 96.0 + a2 * a2 / 960.0
    } else {
        (0.5 * a).tanh() / (4.0 * a)
    }
}

/// Probability of an observed positive label given suitability `p = sigmoid(lambda z)`.
pub fn marginal_from_suitability(p: f64, num_experts: usize) -> f64 {
    let pb = p.powi(num_experts as i32);
    pb / (pb + 1.0 - p)
}

/// Suitability grid step used by [`marginal_curves`].
pub const CURVE_STEP: f64 = 0.01;

/// Table with a suitability column `0, 0.01, ..., 1` followed by one column
/// of [`marginal_from_suitability`] per entry of `expert_counts`.
pub fn marginal_curves(expert_counts: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(pos) = expert_counts.iter().position(|&b| b == 0) {
        return Err(EsmcError::invalid(format!("expert count #{pos} is zero")));
    }
    let steps = (1.0 / CURVE_STEP).round() as usize;
    Ok(DMatrix::from_fn(
        steps + 1,
        expert_counts.len() + 1,
        |i, j| {
            let p = i as f64 / steps as f64;
            if j == 0 {
                p
            } else {
                marginal_from_suitability(p, expert_counts[j - 1])
            }
        },
    ))
}

/// `P(y = 1 | z)` after marginalizing the experts.
pub fn marginal_label_prob(z: f64, cfg: &ExpertConfig) -> f64 {
    let t = cfg.lambda * z;
    // p^B / (p^B + 1 - p) = sigmoid(B ln p - ln(1 - p))
    let logit = cfg.num_experts as f64 * log_sigmoid(t) - log_sigmoid(-t);
    sigmoid(logit)
}

/// Enumeration oracle for [`marginal_label_prob`]: walks every expert configuration.
pub fn brute_force_marginal(z: f64, cfg: &ExpertConfig) -> Result<f64> {
    let b = cfg.num_experts;
    if b > BRUTE_FORCE_MAX_EXPERTS {
        return Err(EsmcError::BudgetExceeded(format!(
            "brute-force marginal supports at most {BRUTE_FORCE_MAX_EXPERTS} experts, got {b}"
        )));
    }
    let p = sigmoid(cfg.lambda * z);
    let (mut pos, mut neg) = (0.0, 0.0);
    for mask in 0u32..(1u32 << b) {
        let on = mask.count_ones() as usize;
        let prob = p.powi(on as i32) * (1.0 - p).powi((b - on) as i32);
        let first_on = mask & 1 == 1;
        if !first_on {
            neg += prob;
        } else if on == b {
            pos += prob;
        }
    }
    Ok(pos / (pos + neg))
}

/// The quadratic-exponential lower bound `G(t, xi) <= sigmoid(t)`, tight at `t = +/- xi`.
pub fn sigmoid_bound(t: f64, xi: f64) -> f64 {
    log_sigmoid_bound(t, xi).exp()
}

/// `ln G(t, xi) = t/2 - ln(2 cosh(xi/2)) - tau(xi) (t^2 - xi^2)`.
pub fn log_sigmoid_bound(t: f64, xi: f64) -> f64 {
    0.5 * t - ln_two_cosh(0.5 * xi) - tau(xi) * (t * t - xi * xi)
}

/// `E_q[ln G(-lambda z, xi)]` for `z ~ N(z_mean, z_var)`.
pub fn expected_log_bound(z_mean: f64, z_var: f64, xi: f64, cfg: &ExpertConfig) -> f64 {
    let l = cfg.lambda;
    let second = l * l * (z_mean * z_mean + z_var);
    -0.5 * l * z_mean - ln_two_cosh(0.5 * xi) - tau(xi) * (second - xi * xi)
}

/// Variational responsibilities `(first expert, each remaining expert)`.
///
/// A positive label pins every expert on. A zero label pins the first expert
/// off and leaves the others free with mean-field probability `sigmoid(lambda z)`.
pub fn expert_responsibilities(y: bool, z_mean: f64, cfg: &ExpertConfig) -> (f64, f64) {
    if y {
        (1.0, 1.0)
    } else {
        (0.0, sigmoid(cfg.lambda * z_mean))
    }
}

/// Optimal bound parameter for `q(z) = N(z_mean, z_var)`.
pub fn update_xi(z_mean: f64, z_var: f64, cfg: &ExpertConfig) -> f64 {
    update_xi_with(XiRule::Corrected, z_mean, z_var, cfg)
}

pub fn update_xi_with(rule: XiRule, z_mean: f64, z_var: f64, cfg: &ExpertConfig) -> f64 {
    match rule {
        XiRule::Corrected => cfg.lambda * (z_mean * z_mean + z_var.max(0.0)).sqrt(),
        XiRule::Paper => cfg.lambda * z_mean.abs(),
    }
}

/// Draws one observed label for suitability `z` by simulating the experts,
/// rejecting configurations that do not produce a binary label.
pub fn sample_label<R: Rng + ?Sized>(z: f64, cfg: &ExpertConfig, rng: &mut R) -> bool {
    let p = sigmoid(cfg.lambda * z);
    loop {
        let first = rng.random::<f64>() < p;
        if !first {
            return false;
        }
        let mut all = true;
        for _ in 1..cfg.num_experts {
            if rng.random::<f64>() >= p {
                all = false;
            }
        }
        if all {
            return true;
        }
    }
}
