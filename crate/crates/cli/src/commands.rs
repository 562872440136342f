//! One function per subcommand. Each takes fully resolved settings.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use esmc_core::baseline::{fit_linear, load_linear, save_linear};
use esmc_core::dataio::{
    drop_instances, drop_labels, format_matrix_csv, parse_sparse, read_matrix_csv, split_labeled,
    write_matrix_csv, write_sparse,
};
use esmc_core::experts::marginal_curves;
use esmc_core::inference::{train_with, SweepRecord};
use esmc_core::metrics::{evaluate, AucAveraging, MetricSelection};
use esmc_core::model::{choose_num_experts, choose_num_pseudo, sample_dataset};
use esmc_core::predict::{load_any_model, save_model_with, score_prob, AnyModel};
use esmc_core::{
    load_model, Dataset, EsmcError, ExpertConfig, HyperParams, Result, TrainConfig, XiRule,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{provenance, provenance_comment, sidecar_path, suffixed, Count};

fn invalid(msg: impl Into<String>) -> EsmcError {
    EsmcError::InvalidArgument(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> EsmcError {
    EsmcError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes a JSON document to `path`, or to stdout when no path is given.
fn emit_json(doc: &Value, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).expect("JSON values always serialize");
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

/// Writes a dataset plus its provenance sidecar and checks that it parses back.
fn write_dataset(data: &Dataset, path: &Path, prov: &Value) -> Result<()> {
    write_sparse(data, path)?;
    let meta = json!({
        "provenance": prov,
        "n": data.len(),
        "n_labeled": data.n_labeled(),
        "num_features": data.num_features(),
        "num_labels": data.num_labels(),
    });
    emit_json(&meta, Some(&sidecar_path(path)))?;
    let back = parse_sparse(path)?;
    let same = back.features == data.features
        && (0..data.n_labeled()).all(|i| back.labels.row(i) == data.labels.row(i));
    if !same {
        return Err(EsmcError::Format {
            field: path.display().to_string(),
            message: "written dataset does not parse back to the same content".into(),
        });
    }
    Ok(())
}

fn default_lambda() -> f64 {
    1.0
}

fn default_iters() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub train: PathBuf,
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to `<out>.trace.csv`.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Defaults to `min(20, K)`.
    #[serde(default)]
    pub latent: Option<usize>,
    #[serde(default)]
    pub pseudo: Count,
    #[serde(default)]
    pub experts: Count,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub xi_rule: XiRule,
    #[serde(default = "default_true")]
    pub propagate: bool,
    /// Progress output only; not part of the provenance record.
    #[serde(default, skip_serializing)]
    pub quiet: bool,
}

/// Loads the training data, appending the rows of the optional unlabeled file.
fn training_data(train: &Path, unlabeled: Option<&Path>) -> Result<Dataset> {
    let data = parse_sparse(train)?;
    match unlabeled {
        None => Ok(data),
        Some(p) => {
            let pool = parse_sparse(p)?;
            data.with_unlabeled(&pool.features)
        }
    }
}

pub fn train(mut s: TrainSettings) -> Result<()> {
    let data = training_data(&s.train, s.unlabeled.as_deref())?;
    if data.n_labeled() == 0 {
        return Err(invalid("training file has no labeled instances"));
    }
    let latent = s.latent.unwrap_or(20.min(data.num_labels()));
    let pseudo = match s.pseudo {
        Count::Auto => choose_num_pseudo(data.len()),
        Count::Fixed(m) => m,
    };
    let experts = match s.experts {
        Count::Auto => choose_num_experts(&data.labels)?,
        Count::Fixed(b) => b,
    };
    if pseudo > data.len() {
        return Err(invalid(format!(
            "{pseudo} pseudo-points for {} instances",
            data.len()
        )));
    }
    // Echo the values actually used.
    s.latent = Some(latent);
    s.pseudo = Count::Fixed(pseudo);
    s.experts = Count::Fixed(experts);
    let trace_path = s
        .trace
        .clone()
        .unwrap_or_else(|| suffixed(&s.out, ".trace.csv"));
    s.trace = Some(trace_path.clone());

    let hp = HyperParams {
        latent_dim: latent,
        experts: ExpertConfig::new(experts, s.lambda)?,
        num_pseudo_c: pseudo,
        num_pseudo_z: pseudo,
        max_iters: s.iters,
        elbo_tol: s.tol,
        ..HyperParams::default()
    };
    let mut cfg = TrainConfig::new(hp);
    cfg.seed = s.seed;
    cfg.xi_rule = s.xi_rule;
    cfg.propagate_pseudo = s.propagate;

    if !s.quiet {
        eprintln!(
            "esmc: training on {} labeled + {} unlabeled instances, F={} K={} L={latent} M={pseudo} B={experts}",
            data.n_labeled(),
            data.n_unlabeled(),
            data.num_features(),
            data.num_labels()
        );
    }
    let mut records: Vec<SweepRecord> = Vec::new();
    let quiet = s.quiet;
    let (model, trace) = train_with(&data, &cfg, |r| {
        if !quiet {
            eprintln!(
                "esmc: sweep {:>4}  elbo {:.10e}  {:.2} s",
                r.iteration, r.elbo, r.seconds
            );
        }
        records.push(*r);
    })?;

    let prov = provenance("train", &s);
    save_model_with(&model, Some(&prov), &s.out)?;
    if load_model(&s.out)? != model {
        return Err(EsmcError::Format {
            field: s.out.display().to_string(),
            message: "saved model does not load back identically".into(),
        });
    }
    let mut rows = vec![[0.0, trace[0], 0.0]];
    rows.extend(
        records
            .iter()
            .map(|r| [r.iteration as f64, r.elbo, r.seconds]),
    );
    let table = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
    write_matrix_csv(
        &table,
        &[
            provenance_comment(&prov),
            "columns iteration,elbo,seconds".into(),
        ],
        &trace_path,
    )?;
    if !s.quiet {
        eprintln!(
            "esmc: wrote {} and {}",
            s.out.display(),
            trace_path.display()
        );
    }
    Ok(())
}

fn default_ridge() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub train: PathBuf,
    pub out: PathBuf,
    /// Defaults to `min(20, K)`.
    #[serde(default)]
    pub latent: Option<usize>,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

pub fn baseline(mut s: BaselineSettings) -> Result<()> {
    let data = parse_sparse(&s.train)?;
    let latent = s.latent.unwrap_or(20.min(data.num_labels()));
    s.latent = Some(latent);
    let model = fit_linear(&data, latent, s.ridge)?;
    save_linear(&model, Some(&provenance("baseline", &s)), &s.out)?;
    if load_linear(&s.out)? != model {
        return Err(EsmcError::Format {
            field: s.out.display().to_string(),
            message: "saved model does not load back identically".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSettings {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub prob: bool,
}

pub fn predict(s: PredictSettings) -> Result<()> {
    let model = load_any_model(&s.model)?;
    let data = parse_sparse(&s.data)?;
    let scores = match (&model, s.prob) {
        (AnyModel::Esmc(m), true) => score_prob(m, &data.features)?,
        (AnyModel::Linear(_), true) => {
            return Err(invalid(
                "--prob needs an esmc model, not the linear baseline",
            ));
        }
        (m, false) => m.score(&data.features)?,
    };
    let prov = provenance("predict", &s);
    write_matrix_csv(&scores, &[provenance_comment(&prov)], &s.out)?;
    let back = read_matrix_csv(&s.out)?;
    if back != scores {
        return Err(EsmcError::Format {
            field: s.out.display().to_string(),
            message: "score file does not read back identically".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub scores: PathBuf,
    pub truth: PathBuf,
    /// Any of `auc`, `coverage`, `p@k`, `microf1max`. Empty selects all.
    #[serde(default)]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub averaging: AucAveraging,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Parses metric names into a selection. An empty list selects everything.
pub fn metric_selection(names: &[String], averaging: AucAveraging) -> Result<MetricSelection> {
    if names.is_empty() {
        return Ok(MetricSelection {
            auc_averaging: averaging,
            ..MetricSelection::default()
        });
    }
    let mut sel = MetricSelection {
        auc: false,
        auc_averaging: averaging,
        coverage: false,
        precision_at: Vec::new(),
        micro_f1_max: false,
    };
    for name in names {
        match name.trim().to_ascii_lowercase().as_str() {
            "auc" => sel.auc = true,
            "coverage" => sel.coverage = true,
            "microf1max" | "micro_f1_max" => sel.micro_f1_max = true,
            other => {
                let k = other
                    .strip_prefix("p@")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| invalid(format!("unknown metric {name:?}")))?;
                if !sel.precision_at.contains(&k) {
                    sel.precision_at.push(k);
                }
            }
        }
    }
    sel.precision_at.sort_unstable();
    Ok(sel)
}

pub fn eval(s: EvalSettings) -> Result<()> {
    let scores = read_matrix_csv(&s.scores)?;
    let truth = parse_sparse(&s.truth)?;
    let sel = metric_selection(&s.metrics, s.averaging)?;
    let report = evaluate(&scores, &truth.labels, &sel)?;
    let doc = json!({
        "report": report,
        "provenance": provenance("eval", &s),
    });
    emit_json(&doc, s.out.as_deref())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropLabelsSettings {
    pub input: PathBuf,
    pub rate: f64,
    pub out: PathBuf,
    /// Defaults to `<out>.removed.csv`.
    #[serde(default)]
    pub removed: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

pub fn drop_labels_cmd(mut s: DropLabelsSettings) -> Result<()> {
    let data = parse_sparse(&s.input)?;
    let (dropped, pairs) = drop_labels(&data, s.rate, s.seed)?;
    let removed_path = s
        .removed
        .clone()
        .unwrap_or_else(|| suffixed(&s.out, ".removed.csv"));
    s.removed = Some(removed_path.clone());
    let prov = provenance("drop-labels", &s);
    write_dataset(&dropped, &s.out, &prov)?;
    let mut text = format!(
        "# {}\n# columns instance,label\n",
        provenance_comment(&prov)
    );
    for (i, k) in &pairs {
        text.push_str(&format!("{i},{k}\n"));
    }
    write_text(&removed_path, &text)?;
    if read_matrix_csv(&removed_path)?.nrows() != pairs.len() {
        return Err(EsmcError::Format {
            field: removed_path.display().to_string(),
            message: "removed-pairs file does not read back".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropInstancesSettings {
    pub input: PathBuf,
    pub keep: f64,
    pub out_labeled: PathBuf,
    pub out_unlabeled: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

pub fn drop_instances_cmd(s: DropInstancesSettings) -> Result<()> {
    let data = parse_sparse(&s.input)?;
    let split = drop_instances(&data, s.keep, s.seed)?;
    let nl = split.n_labeled();
    let labeled = split.select_labeled(&(0..nl).collect::<Vec<_>>());
    let rest = DMatrix::from_fn(split.len() - nl, split.num_features(), |i, j| {
        split.features[(nl + i, j)]
    });
    let unlabeled = Dataset::new(
        rest,
        esmc_core::LabelMatrix::new(split.len() - nl, split.num_labels()),
    )?;
    let prov = provenance("drop-instances", &s);
    write_dataset(&labeled, &s.out_labeled, &prov)?;
    write_dataset(&unlabeled.without_labels(), &s.out_unlabeled, &prov)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub input: PathBuf,
    pub test: f64,
    pub out_train: PathBuf,
    pub out_test: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

pub fn split_cmd(s: SplitSettings) -> Result<()> {
    let data = parse_sparse(&s.input)?;
    let (train, test) = split_labeled(&data, s.test, s.seed)?;
    let prov = provenance("split", &s);
    write_dataset(&train, &s.out_train, &prov)?;
    write_dataset(&test, &s.out_test, &prov)
}

fn default_experts() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub n: usize,
    #[serde(default)]
    pub unlabeled: usize,
    pub features: usize,
    pub labels: usize,
    /// Defaults to `min(3, K)`.
    #[serde(default)]
    pub latent: Option<usize>,
    #[serde(default = "default_experts")]
    pub experts: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub pseudo: Count,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    /// Suitability matrix for every row. Defaults to `<out>.z.csv`.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

pub fn synth(mut s: SynthSettings) -> Result<()> {
    if s.n == 0 || s.features == 0 || s.labels == 0 {
        return Err(invalid(
            "synth: --n, --features and --labels must be positive",
        ));
    }
    let total = s.n + s.unlabeled;
    let latent = s.latent.unwrap_or(3.min(s.labels));
    let pseudo = match s.pseudo {
        Count::Auto => choose_num_pseudo(total),
        Count::Fixed(m) => m,
    };
    s.latent = Some(latent);
    s.pseudo = Count::Fixed(pseudo);
    let truth_path = s
        .truth
        .clone()
        .unwrap_or_else(|| suffixed(&s.out, ".z.csv"));
    s.truth = Some(truth_path.clone());
    let hp = HyperParams {
        latent_dim: latent,
        experts: ExpertConfig::new(s.experts, s.lambda)?,
        num_pseudo_c: pseudo,
        num_pseudo_z: pseudo,
        ..HyperParams::default()
    };
    let (data, z) = sample_dataset(&hp, s.n, s.unlabeled, s.features, s.labels, s.seed)?;
    let prov = provenance("synth", &s);
    write_dataset(&data, &s.out, &prov)?;
    write_matrix_csv(&z, &[provenance_comment(&prov)], &truth_path)
}

fn default_curve_experts() -> Vec<usize> {
    vec![1, 2, 5, 10, 20]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSettings {
    #[serde(default = "default_curve_experts")]
    pub experts: Vec<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Curve table text: suitability on a 0.01 grid, then one column per `B`.
pub fn curves_text(s: &CurvesSettings) -> Result<String> {
    ExpertConfig::new(1, s.lambda)?;
    if s.experts.is_empty() {
        return Err(invalid("curves: at least one expert count is needed"));
    }
    let table = marginal_curves(&s.experts)?;
    let names: Vec<String> = s.experts.iter().map(|b| format!("B={b}")).collect();
    let comments = [
        provenance_comment(&provenance("curves", s)),
        format!("columns suitability,{}", names.join(",")),
    ];
    Ok(format_matrix_csv(&table, &comments))
}

pub fn curves(s: CurvesSettings) -> Result<()> {
    let text = curves_text(&s)?;
    match &s.out {
        Some(p) => write_text(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}
