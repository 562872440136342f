//! Rank-based multi-label metrics.
//!
//! Ties in score are broken by ascending label index wherever a strict
//! ordering is needed (coverage, precision@k). AUC counts tied pairs as 1/2.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::LabelMatrix;
use crate::error::{EsmcError, Result};

fn check_shapes(scores: &DMatrix<f64>, truth: &LabelMatrix) -> Result<()> {
    if scores.nrows() != truth.rows() || scores.ncols() != truth.cols() {
        return Err(EsmcError::invalid(format!(
            "score matrix is {}x{}, truth is {}x{}",
            scores.nrows(),
            scores.ncols(),
            truth.rows(),
            truth.cols()
        )));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(EsmcError::invalid("score matrix contains NaN"));
    }
    Ok(())
}

/// Mann-Whitney AUC of one list: fraction of (positive, negative) pairs
/// ordered correctly, ties counting 1/2. `None` when a class is empty.
fn pairwise_auc(items: impl Iterator<Item = (f64, bool)>) -> Option<f64> {
    let mut v: Vec<(f64, bool)> = items.collect();
    let pos = v.iter().filter(|(_, y)| *y).count();
    let neg = v.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the number of correctly ordered pairs, so ties stay integral.
    let mut twice_wins: u64 = 0;
    let mut negs_below: u64 = 0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        let (mut p_tie, mut n_tie) = (0u64, 0u64);
        while j < v.len() && v[j].0 == v[i].0 {
            if v[j].1 {
                p_tie += 1;
            } else {
                n_tie += 1;
            }
            j += 1;
        }
        twice_wins += p_tie * (2 * negs_below + n_tie);
        negs_below += n_tie;
        i = j;
    }
    Some(twice_wins as f64 / (2 * pos * neg) as f64)
}

/// Instance-averaged AUC over instances with at least one relevant and one
/// irrelevant label.
pub fn auc(scores: &DMatrix<f64>, truth: &LabelMatrix) -> Result<f64> {
    check_shapes(scores, truth)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..scores.nrows() {
        let row = truth.row(i);
        if let Some(a) = pairwise_auc((0..scores.ncols()).map(|k| (scores[(i, k)], row[k]))) {
            total += a;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EsmcError::degenerate(
            "no instance has both relevant and irrelevant labels",
        ));
    }
    Ok(total / count as f64)
}

/// Label-averaged (macro) AUC over labels with at least one positive and one negative instance.
pub fn auc_macro(scores: &DMatrix<f64>, truth: &LabelMatrix) -> Result<f64> {
    auc_macro_over(scores, truth, 0..scores.ncols())
}

/// Macro AUC restricted to the given label columns.
pub fn auc_macro_over(
    scores: &DMatrix<f64>,
    truth: &LabelMatrix,
    labels: impl IntoIterator<Item = usize>,
) -> Result<f64> {
    check_shapes(scores, truth)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for k in labels {
        if k >= scores.ncols() {
            return Err(EsmcError::invalid(format!("label {k} out of range")));
        }
        if let Some(a) =
            pairwise_auc((0..scores.nrows()).map(|i| (scores[(i, k)], truth.get(i, k))))
        {
            total += a;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EsmcError::degenerate(
            "no label has both relevant and irrelevant instances",
        ));
    }
    Ok(total / count as f64)
}

/// Label indices of row `i` ordered by descending score, then ascending index.
fn ranking(scores: &DMatrix<f64>, i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.ncols()).collect();
    idx.sort_by(|&a, &b| scores[(i, b)].total_cmp(&scores[(i, a)]).then(a.cmp(&b)));
    idx
}

/// Mean over instances of (deepest rank of a relevant label) - 1; zero for
/// instances without relevant labels. Lower is better.
pub fn coverage(scores: &DMatrix<f64>, truth: &LabelMatrix) -> Result<f64> {
    check_shapes(scores, truth)?;
    if scores.nrows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..scores.nrows() {
        let order = ranking(scores, i);
        let deepest = order.iter().rposition(|&k| truth.get(i, k));
        total += deepest.map_or(0.0, |p| p as f64);
    }
    Ok(total / scores.nrows() as f64)
}

/// Mean fraction of relevant labels among each instance's top `k`.
pub fn precision_at_k(scores: &DMatrix<f64>, truth: &LabelMatrix, k: usize) -> Result<f64> {
    check_shapes(scores, truth)?;
    if k == 0 || k > scores.ncols() {
        return Err(EsmcError::invalid(format!(
            "precision@k needs 1 <= k <= {}, got {k}",
            scores.ncols()
        )));
    }
    if scores.nrows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..scores.nrows() {
        let hits = ranking(scores, i)
            .iter()
            .take(k)
            .filter(|&&l| truth.get(i, l))
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / scores.nrows() as f64)
}

/// Best micro-averaged F1 over global thresholds `score >= t`, with `t`
/// ranging over every distinct score.
pub fn micro_f1_max(scores: &DMatrix<f64>, truth: &LabelMatrix) -> Result<f64> {
    check_shapes(scores, truth)?;
    let positives = truth.count_ones();
    if positives == 0 {
        return Err(EsmcError::degenerate(
            "micro-F1 needs at least one relevant label",
        ));
    }
    let mut cells: Vec<(f64, bool)> = Vec::with_capacity(scores.len());
    for i in 0..scores.nrows() {
        for k in 0..scores.ncols() {
            cells.push((scores[(i, k)], truth.get(i, k)));
        }
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = 0.0f64;
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < cells.len() {
        let t = cells[i].0;
        while i < cells.len() && cells[i].0 == t {
            predicted += 1;
            if cells[i].1 {
                tp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (predicted + positives) as f64;
        best = best.max(f1);
    }
    Ok(best)
}

/// Which AUC averaging a report used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucAveraging {
    #[default]
    Instance,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub auc: bool,
    pub auc_averaging: AucAveraging,
    pub coverage: bool,
    pub precision_at: Vec<usize>,
    pub micro_f1_max: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            auc: true,
            auc_averaging: AucAveraging::Instance,
            coverage: true,
            precision_at: vec![1, 3],
            micro_f1_max: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub auc_averaging: AucAveraging,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    /// Negated coverage, so that larger is better as for the other metrics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_coverage: Option<f64>,
    pub precision_at: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1_max: Option<f64>,
    pub n_evaluated: usize,
}

pub fn evaluate(
    scores: &DMatrix<f64>,
    truth: &LabelMatrix,
    sel: &MetricSelection,
) -> Result<EvalReport> {
    check_shapes(scores, truth)?;
    let auc_v = if sel.auc {
        Some(match sel.auc_averaging {
            AucAveraging::Instance => auc(scores, truth)?,
            AucAveraging::Macro => auc_macro(scores, truth)?,
        })
    } else {
        None
    };
    let cov = if sel.coverage {
        Some(coverage(scores, truth)?)
    } else {
        None
    };
    let mut precision_at = BTreeMap::new();
    for &k in &sel.precision_at {
        precision_at.insert(k, precision_at_k(scores, truth, k)?);
    }
    Ok(EvalReport {
        auc: auc_v,
        auc_averaging: sel.auc_averaging,
        coverage: cov,
        neg_coverage: cov.map(|c| -c),
        precision_at,
        micro_f1_max: if sel.micro_f1_max {
            Some(micro_f1_max(scores, truth)?)
        } else {
            None
        },
        n_evaluated: scores.nrows(),
    })
}
