//! Linear label-embedding baseline: project centered labels onto their top
//! principal directions and ridge-regress the projections on the features.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{Dataset, LabelMatrix};
use crate::error::{EsmcError, Result};
use crate::inference::principal_projection;
use crate::model::gaussian_matrix;
use crate::predict::{
    finish_json, matrix_from_rows, parse_envelope, rows_of, typed, FORMAT_VERSION,
    LINEAR_MODEL_TYPE,
};
use crate::sparse_gp::chol_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaselineModel {
    /// K x L, orthonormal columns.
    pub projection: DMatrix<f64>,
    /// F x L.
    pub regression: DMatrix<f64>,
    pub label_mean: DVector<f64>,
    pub ridge: f64,
}

pub fn fit_linear(data: &Dataset, latent_dim: usize, ridge: f64) -> Result<LinearBaselineModel> {
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(EsmcError::invalid(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    let n = data.n_labeled();
    let k = data.num_labels();
    if n == 0 {
        return Err(EsmcError::invalid("linear baseline needs labeled rows"));
    }
    if latent_dim == 0 || latent_dim > k.min(n) {
        return Err(EsmcError::invalid(format!(
            "latent dimension {latent_dim} must be in 1..={}",
            k.min(n)
        )));
    }
    let y = data.labels.to_real();
    let label_mean = y.row_mean().transpose();
    let (targets, projection) = principal_projection(&y, latent_dim)?;
    let x = data.features.rows(0, n).clone_owned();
    let mut gram = x.transpose() * &x;
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let regression = chol_solve(&gram, &(x.transpose() * targets))?.solution;
    Ok(LinearBaselineModel {
        projection,
        regression,
        label_mean,
        ridge,
    })
}

pub fn score_linear(model: &LinearBaselineModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = model.regression.nrows();
    if features.ncols() != f {
        return Err(EsmcError::invalid(format!(
            "feature dimension mismatch: model has F={f}, input has F={}",
            features.ncols()
        )));
    }
    let mut s = features * &model.regression * model.projection.transpose();
    for mut row in s.row_iter_mut() {
        row += model.label_mean.transpose();
    }
    Ok(s)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearDoc {
    format_version: u32,
    model_type: String,
    ridge: f64,
    projection: Vec<Vec<f64>>,
    regression: Vec<Vec<f64>>,
    label_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Value>,
}

pub fn linear_to_json(model: &LinearBaselineModel, provenance: Option<&Value>) -> Result<String> {
    finish_json(&LinearDoc {
        format_version: FORMAT_VERSION,
        model_type: LINEAR_MODEL_TYPE.into(),
        ridge: model.ridge,
        projection: rows_of(&model.projection),
        regression: rows_of(&model.regression),
        label_mean: model.label_mean.iter().copied().collect(),
        provenance: provenance.cloned(),
    })
}

pub fn linear_from_json(text: &str) -> Result<LinearBaselineModel> {
    let doc: LinearDoc = typed(parse_envelope(text, LINEAR_MODEL_TYPE)?)?;
    let k = doc.label_mean.len();
    let l = doc.projection.first().map_or(0, Vec::len);
    if doc.projection.len() != k || l == 0 {
        return Err(EsmcError::format(
            "projection",
            format!("expected {k} non-empty rows"),
        ));
    }
    let projection = matrix_from_rows(&doc.projection, l, "projection")?;
    let regression = matrix_from_rows(&doc.regression, l, "regression")?;
    if regression.nrows() == 0 {
        return Err(EsmcError::format("regression", "no rows"));
    }
    if !(doc.ridge > 0.0 && doc.ridge.is_finite()) {
        return Err(EsmcError::format("ridge", "must be positive"));
    }
    if let Some(i) = doc.label_mean.iter().position(|v| !v.is_finite()) {
        return Err(EsmcError::format(
            format!("label_mean[{i}]"),
            "non-finite value",
        ));
    }
    Ok(LinearBaselineModel {
        projection,
        regression,
        label_mean: DVector::from_vec(doc.label_mean),
        ridge: doc.ridge,
    })
}

pub fn save_linear(
    model: &LinearBaselineModel,
    provenance: Option<&Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, linear_to_json(model, provenance)?).map_err(|e| EsmcError::io(path, e))
}

pub fn load_linear(path: impl AsRef<Path>) -> Result<LinearBaselineModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EsmcError::io(path, e))?;
    linear_from_json(&text)
}

/// Settings for [`sample_head_tail`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailConfig {
    pub n: usize,
    pub head_labels: usize,
    pub tail_labels: usize,
    /// Feature dimensions driving the head labels.
    pub head_features: usize,
    /// Features no label depends on.
    pub noise_features: usize,
    /// Head labels fire when their noisy score exceeds this value.
    pub head_threshold: f64,
    /// Tail labels fire when the tail feature exceeds this value.
    pub tail_threshold: f64,
}

impl Default for HeadTailConfig {
    fn default() -> Self {
        Self {
            n: 400,
            head_labels: 8,
            tail_labels: 4,
            head_features: 2,
            noise_features: 2,
            head_threshold: 0.25,
            tail_threshold: 2.054,
        }
    }
}

impl HeadTailConfig {
    pub fn num_features(&self) -> usize {
        self.head_features + 1 + self.noise_features
    }

    /// Column index of the feature carrying the tail labels.
    pub fn tail_feature(&self) -> usize {
        self.head_features
    }

    pub fn tail_range(&self) -> std::ops::Range<usize> {
        self.head_labels..self.head_labels + self.tail_labels
    }
}

/// Head labels are noisy linear-threshold functions of the first
/// `head_features` features. Every tail label fires when the single tail
/// feature, which no head label depends on, exceeds `tail_threshold`.
/// Columns are heads then tails.
pub fn sample_head_tail(cfg: &HeadTailConfig, seed: u64) -> Result<Dataset> {
    if cfg.n == 0 || cfg.head_labels == 0 || cfg.tail_labels == 0 || cfg.head_features == 0 {
        return Err(EsmcError::invalid("head/tail sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, cfg.n, cfg.num_features(), 1.0);
    let mut w = gaussian_matrix(&mut rng, cfg.head_features, cfg.head_labels, 1.0);
    for mut col in w.column_iter_mut() {
        let norm = col.norm().max(f64::MIN_POSITIVE);
        col /= norm;
    }
    let noise = gaussian_matrix(&mut rng, cfg.n, cfg.head_labels, 0.3);
    let head = x.columns(0, cfg.head_features) * &w + noise;
    let tail = cfg.tail_feature();
    let labels = LabelMatrix::from_fn(cfg.n, cfg.head_labels + cfg.tail_labels, |i, j| {
        if j < cfg.head_labels {
            head[(i, j)] > cfg.head_threshold
        } else {
            x[(i, tail)] > cfg.tail_threshold
        }
    });
    Dataset::new(x, labels)
}
