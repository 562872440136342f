//! Test-time scoring and model files.
//!
//! Model files are UTF-8 JSON documents tagged with `format_version` and
//! `model_type`. Covariances are stored as their lower-triangular factors,
//! one ragged row per pseudo-point.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baseline::LinearBaselineModel;
use crate::error::{EsmcError, Result};
use crate::experts::marginal_label_prob;
use crate::kernel::KernelConfig;
use crate::model::HyperParams;
use crate::sparse_gp::{PseudoSet, SparseGpLayer};

pub const FORMAT_VERSION: u32 = 1;
pub const ESMC_MODEL_TYPE: &str = "esmc";
pub const LINEAR_MODEL_TYPE: &str = "linear_baseline";

/// The two fitted layers and the constants they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub layer_c: SparseGpLayer,
    pub layer_z: SparseGpLayer,
    pub hp: HyperParams,
    pub format_version: u32,
}

impl TrainedModel {
    pub fn new(layer_c: SparseGpLayer, layer_z: SparseGpLayer, hp: HyperParams) -> Result<Self> {
        let m = Self {
            layer_c,
            layer_z,
            hp,
            format_version: FORMAT_VERSION,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_features(&self) -> usize {
        self.layer_c.pseudo.dim()
    }

    pub fn num_labels(&self) -> usize {
        self.layer_z.out_dim
    }

    fn validate(&self) -> Result<()> {
        if self.layer_c.out_dim != self.layer_z.pseudo.dim() {
            return Err(EsmcError::format(
                "layer_z.pseudo_points",
                format!(
                    "latent dimension {} does not match c-layer outputs {}",
                    self.layer_z.pseudo.dim(),
                    self.layer_c.out_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Raw suitability scores `E[f_z(E[f_c(x)])]`, one row per input.
pub fn score(model: &TrainedModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != model.num_features() {
        return Err(EsmcError::invalid(format!(
            "feature dimension mismatch: model expects F={}, got F={}",
            model.num_features(),
            features.ncols()
        )));
    }
    let latent = model.layer_c.predict_mean(features)?;
    model.layer_z.predict_mean(&latent)
}

/// Scores mapped through the expert marginal `P(y = 1 | z)`.
pub fn score_prob(model: &TrainedModel, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cfg = model.hp.experts;
    Ok(score(model, features)?.map(|z| marginal_label_prob(z, &cfg)))
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    pseudo_points: Vec<Vec<f64>>,
    bandwidth: f64,
    input_noise: f64,
    obs_noise: f64,
    residual_noise: f64,
    value_mean: Vec<Vec<f64>>,
    value_cov_factor: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EsmcDoc {
    format_version: u32,
    model_type: String,
    hyperparams: HyperParams,
    layer_c: LayerDoc,
    layer_z: LayerDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Value>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    cols: usize,
    field: &str,
) -> Result<DMatrix<f64>> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(EsmcError::format(
                format!("{field}[{i}]"),
                format!("expected {cols} entries, found {}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(EsmcError::format(
                format!("{field}[{i}][{j}]"),
                "non-finite value",
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl LayerDoc {
    fn from_layer(l: &SparseGpLayer) -> Self {
        let f = &l.value_cov_factor;
        Self {
            pseudo_points: rows_of(&l.pseudo.points),
            bandwidth: l.pseudo.kernel.bandwidth(),
            input_noise: l.pseudo.input_noise,
            obs_noise: l.obs_noise,
            residual_noise: l.residual_noise,
            value_mean: rows_of(&l.value_mean),
            value_cov_factor: (0..f.nrows())
                .map(|i| (0..=i).map(|j| f[(i, j)]).collect())
                .collect(),
        }
    }

    fn into_layer(self, field: &str) -> Result<SparseGpLayer> {
        let m = self.pseudo_points.len();
        if m == 0 {
            return Err(EsmcError::format(
                format!("{field}.pseudo_points"),
                "no pseudo-points",
            ));
        }
        let dim = self.pseudo_points[0].len();
        let points = matrix_from_rows(&self.pseudo_points, dim, &format!("{field}.pseudo_points"))?;
        let kernel = KernelConfig::new(self.bandwidth)
            .map_err(|e| EsmcError::format(format!("{field}.bandwidth"), e.to_string()))?;
        let pseudo = PseudoSet::new(points, kernel, self.input_noise)
            .map_err(|e| EsmcError::format(format!("{field}.input_noise"), e.to_string()))?;
        if self.value_mean.len() != m {
            return Err(EsmcError::format(
                format!("{field}.value_mean"),
                format!("expected {m} rows, found {}", self.value_mean.len()),
            ));
        }
        let out_dim = self.value_mean[0].len();
        let value_mean =
            matrix_from_rows(&self.value_mean, out_dim, &format!("{field}.value_mean"))?;
        if self.value_cov_factor.len() != m {
            return Err(EsmcError::format(
                format!("{field}.value_cov_factor"),
                format!("expected {m} rows, found {}", self.value_cov_factor.len()),
            ));
        }
        let mut factor = DMatrix::zeros(m, m);
        for (i, row) in self.value_cov_factor.iter().enumerate() {
            let f = format!("{field}.value_cov_factor[{i}]");
            if row.len() != i + 1 {
                return Err(EsmcError::format(
                    f,
                    format!("expected {} entries, found {}", i + 1, row.len()),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(EsmcError::format(format!("{f}[{j}]"), "non-finite value"));
                }
                factor[(i, j)] = v;
            }
        }
        let mut layer =
            SparseGpLayer::from_prior(pseudo, out_dim, self.obs_noise, self.residual_noise)
                .map_err(|e| EsmcError::format(field, e.to_string()))?;
        layer.value_mean = value_mean;
        layer.value_cov_factor = factor;
        Ok(layer)
    }
}

/// Serializes a model. The output is canonical: equal models give equal bytes.
pub fn model_to_json(model: &TrainedModel, provenance: Option<&Value>) -> Result<String> {
    let doc = EsmcDoc {
        format_version: model.format_version,
        model_type: ESMC_MODEL_TYPE.into(),
        hyperparams: model.hp.clone(),
        layer_c: LayerDoc::from_layer(&model.layer_c),
        layer_z: LayerDoc::from_layer(&model.layer_z),
        provenance: provenance.cloned(),
    };
    finish_json(&doc)
}

pub(crate) fn finish_json<T: Serialize>(doc: &T) -> Result<String> {
    let value =
        serde_json::to_value(doc).map_err(|e| EsmcError::format("document", e.to_string()))?;
    if let Some(path) = first_non_finite(&value, String::new()) {
        return Err(EsmcError::format(path, "non-finite value"));
    }
    let mut s =
        serde_json::to_string(doc).map_err(|e| EsmcError::format("document", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

// serde_json renders NaN and infinities as null.
fn first_non_finite(v: &Value, path: String) -> Option<String> {
    match v {
        Value::Null => Some(path),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, x)| first_non_finite(x, format!("{path}[{i}]"))),
        Value::Object(map) => map.iter().find_map(|(k, x)| {
            // Optional settings and free-form provenance may be null.
            if x.is_null() || k == "provenance" {
                return None;
            }
            let p = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            first_non_finite(x, p)
        }),
        _ => None,
    }
}

/// Parses the envelope shared by every model file and checks its version and type.
pub(crate) fn parse_envelope(text: &str, expected_type: &str) -> Result<Value> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| EsmcError::format("document", e.to_string()))?;
    match value.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(EsmcError::format(
                "format_version",
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ))
        }
        None => {
            return Err(EsmcError::format(
                "format_version",
                "missing or not an integer",
            ))
        }
    }
    match value.get("model_type").and_then(Value::as_str) {
        Some(t) if t == expected_type => Ok(value),
        Some(t) => Err(EsmcError::format(
            "model_type",
            format!("expected {expected_type:?}, found {t:?}"),
        )),
        None => Err(EsmcError::format("model_type", "missing")),
    }
}

pub(crate) fn typed<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        EsmcError::format(path, e.into_inner().to_string())
    })
}

pub fn model_from_json(text: &str) -> Result<TrainedModel> {
    let doc: EsmcDoc = typed(parse_envelope(text, ESMC_MODEL_TYPE)?)?;
    doc.hyperparams
        .validate()
        .map_err(|e| EsmcError::format("hyperparams", e.to_string()))?;
    let layer_c = doc.layer_c.into_layer("layer_c")?;
    let layer_z = doc.layer_z.into_layer("layer_z")?;
    TrainedModel::new(layer_c, layer_z, doc.hyperparams)
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    save_model_with(model, None, path)
}

/// Saves a model with an embedded provenance record.
pub fn save_model_with(
    model: &TrainedModel,
    provenance: Option<&Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model, provenance)?).map_err(|e| EsmcError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EsmcError::io(path, e))?;
    model_from_json(&text)
}

/// Either kind of model file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Esmc(TrainedModel),
    Linear(LinearBaselineModel),
}

impl AnyModel {
    pub fn num_features(&self) -> usize {
        match self {
            AnyModel::Esmc(m) => m.num_features(),
            AnyModel::Linear(m) => m.regression.nrows(),
        }
    }

    pub fn score(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            AnyModel::Esmc(m) => score(m, features),
            AnyModel::Linear(m) => crate::baseline::score_linear(m, features),
        }
    }
}

/// Loads a model file of either type, dispatching on `model_type`.
pub fn load_any_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EsmcError::io(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| EsmcError::format("document", e.to_string()))?;
    match value.get("model_type").and_then(Value::as_str) {
        Some(LINEAR_MODEL_TYPE) => Ok(AnyModel::Linear(crate::baseline::linear_from_json(&text)?)),
        _ => Ok(AnyModel::Esmc(model_from_json(&text)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::ExpertConfig;

    fn minimal() -> TrainedModel {
        let pc = PseudoSet::new(
            DMatrix::from_element(1, 2, 0.5),
            KernelConfig::new(1.5).unwrap(),
            0.1,
        )
        .unwrap();
        let mut lc = SparseGpLayer::from_prior(pc, 1, 0.1, 1e-3).unwrap();
        lc.value_mean[(0, 0)] = 0.75;
        let pz = PseudoSet::new(
            DMatrix::from_element(1, 1, 0.7),
            KernelConfig::new(0.9).unwrap(),
            0.1,
        )
        .unwrap();
        let mut lz = SparseGpLayer::from_prior(pz, 1, 0.1, 1e-3).unwrap();
        lz.value_mean[(0, 0)] = -1.25;
        lz.value_cov_factor[(0, 0)] = 0.3;
        let hp = HyperParams {
            latent_dim: 1,
            num_pseudo_c: 1,
            num_pseudo_z: 1,
            ..HyperParams::default()
        };
        TrainedModel::new(lc, lz, hp).unwrap()
    }

    #[test]
    fn zero_means_give_zero_scores() {
        let mut m = minimal();
        m.layer_c.value_mean.fill(0.0);
        m.layer_z.value_mean.fill(0.0);
        let s = score(&m, &DMatrix::from_element(3, 2, 0.2)).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prob_at_zero() {
        let mut m = minimal();
        m.layer_z.value_mean.fill(0.0);
        let x = DMatrix::from_element(1, 2, 0.0);
        assert!((score_prob(&m, &x).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        m.hp.experts = ExpertConfig::new(20, 1.0).unwrap();
        assert!(
            (score_prob(&m, &x).unwrap()[(0, 0)] - 0.5f64.powi(20) / (0.5f64.powi(20) + 0.5)).abs()
                < 1e-15
        );
    }

    #[test]
    fn permuting_rows_permutes_scores() {
        let m = minimal();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.4, 2.0, 2.0]);
        let p = DMatrix::from_row_slice(3, 2, &[2.0, 2.0, 0.1, 0.2, -1.0, 0.4]);
        let sx = score(&m, &x).unwrap();
        let sp = score(&m, &p).unwrap();
        assert_eq!(sp[(0, 0)], sx[(2, 0)]);
        assert_eq!(sp[(1, 0)], sx[(0, 0)]);
        assert_eq!(sp[(2, 0)], sx[(1, 0)]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = minimal();
        match score(&m, &DMatrix::zeros(1, 3)) {
            Err(EsmcError::InvalidArgument(msg)) => {
                assert!(msg.contains("F=2") && msg.contains("F=3"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_model_roundtrip() {
        let m = minimal();
        let text = model_to_json(&m, None).unwrap();
        let back = model_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_json(&back, None).unwrap(), text);
        assert_eq!(back.layer_z.value_cov_factor[(0, 0)], 0.3);
        assert_eq!(back.layer_c.pseudo.kernel.bandwidth(), 1.5);
    }

    #[test]
    fn file_roundtrip_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let prov = serde_json::json!({"tool": "test", "seed": 3});
        save_model_with(&minimal(), Some(&prov), &p).unwrap();
        let first = fs::read(&p).unwrap();
        let m = load_model(&p).unwrap();
        save_model_with(&m, Some(&prov), &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
        assert!(matches!(load_any_model(&p).unwrap(), AnyModel::Esmc(_)));
    }

    #[test]
    fn format_errors_name_fields() {
        let text = model_to_json(&minimal(), None).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            model_from_json(truncated),
            Err(EsmcError::Format { .. })
        ));

        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        match model_from_json(&bumped) {
            Err(EsmcError::Format { field, .. }) => assert_eq!(field, "format_version"),
            other => panic!("{other:?}"),
        }

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["layer_z"]["value_mean"][0][0] = Value::Null;
        match model_from_json(&v.to_string()) {
            Err(EsmcError::Format { field, .. }) => {
                assert!(field.contains("layer_z.value_mean"), "{field}")
            }
            other => panic!("{other:?}"),
        }

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["layer_c"]["value_cov_factor"][0] = serde_json::json!([0.1, 0.2]);
        match model_from_json(&v.to_string()) {
            Err(EsmcError::Format { field, .. }) => {
                assert_eq!(field, "layer_c.value_cov_factor[0]")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refuses_to_save_non_finite() {
        let mut m = minimal();
        m.layer_c.value_mean[(0, 0)] = f64::NAN;
        match model_to_json(&m, None) {
            Err(EsmcError::Format { field, .. }) => assert_eq!(field, "layer_c.value_mean[0][0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn continuity_under_tiny_perturbation() {
        let m = minimal();
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        let y = x.map(|v| v + 1e-8);
        let d = (score(&m, &x).unwrap() - score(&m, &y).unwrap())
            .abs()
            .max();
        assert!(d <= 1e-4);
    }
}
