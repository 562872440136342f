//! Datasets, the sparse text format, score CSV files and the two
//! corruption protocols (missing labels, semi-supervised).
//!
//! Sparse format: a header line `n F K`, then `n` lines of
//! `l1,l2,... f1:v1 f2:v2 ...` with 0-based indices. A line starting with a
//! space has no labels.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EsmcError, Result};

/// Dense row-major binary matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    /// Builds a matrix from per-row lists of active label indices.
    pub fn from_index_lists(lists: &[Vec<usize>], cols: usize) -> Result<Self> {
        let mut m = Self::new(lists.len(), cols);
        for (i, list) in lists.iter().enumerate() {
            for &k in list {
                if k >= cols {
                    return Err(EsmcError::invalid(format!(
                        "label index {k} out of range for K={cols}"
                    )));
                }
                m.set(i, k, true);
            }
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for i in 0..rows {
            for k in 0..cols {
                m.data[i * cols + k] = f(i, k);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> bool {
        self.data[i * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: bool) {
        self.data[i * self.cols + k] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Active cells in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(idx, _)| (idx / cols, idx % cols))
    }

    pub fn index_list(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&k| self.get(i, k)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), self.cols, |i, k| self.get(idx[i], k))
    }

    /// 0/1 values as a real matrix.
    pub fn to_real(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.rows,
            self.cols,
            |i, k| if self.get(i, k) { 1.0 } else { 0.0 },
        )
    }
}

/// Feature matrix with a labeled prefix.
///
/// Rows `0..labels.rows()` are labeled; the remaining rows are unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: LabelMatrix,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: LabelMatrix) -> Result<Self> {
        if labels.rows() > features.nrows() {
            return Err(EsmcError::invalid(format!(
                "{} label rows for {} instances",
                labels.rows(),
                features.nrows()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            let n = features.nrows();
            return Err(EsmcError::invalid(format!(
                "non-finite feature value at instance {}, feature {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.rows()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.features.nrows() - self.labels.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn feature_row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// Rows `idx` of the labeled block, as a fully labeled dataset.
    pub fn select_labeled(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: select_rows(&self.features, idx),
            labels: self.labels.select_rows(idx),
        }
    }

    /// Appends `other`'s rows as unlabeled instances.
    pub fn with_unlabeled(&self, other: &DMatrix<f64>) -> Result<Dataset> {
        if other.nrows() > 0 && other.ncols() != self.num_features() {
            return Err(EsmcError::invalid(format!(
                "unlabeled features have dimension {}, expected {}",
                other.ncols(),
                self.num_features()
            )));
        }
        let n = self.len();
        let f = self.num_features();
        let features = DMatrix::from_fn(n + other.nrows(), f, |i, j| {
            if i < n {
                self.features[(i, j)]
            } else {
                other[(i - n, j)]
            }
        });
        Dataset::new(features, self.labels.clone())
    }

    /// Forgets every label, keeping all rows as unlabeled instances.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: LabelMatrix::new(0, self.num_labels()),
        }
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

fn perr(line: usize, message: impl Into<String>) -> EsmcError {
    EsmcError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses the sparse text format from a file.
pub fn parse_sparse(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EsmcError::io(path, e))?;
    parse_sparse_str(&text)
}

/// Parses the sparse text format from memory.
pub fn parse_sparse_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr(1, "missing header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(perr(1, format!("header must be `n F K`, got {header:?}")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|_| {
            perr(
                1,
                format!("header field {s:?} is not a nonnegative integer"),
            )
        })
    };
    let (n, f, k) = (
        parse_dim(dims[0])?,
        parse_dim(dims[1])?,
        parse_dim(dims[2])?,
    );

    let mut features = DMatrix::zeros(n, f);
    let mut labels = LabelMatrix::new(n, k);
    for i in 0..n {
        let lineno = i + 2;
        let line = lines.next().ok_or_else(|| {
            perr(
                lineno,
                format!("expected {n} instances, file ends after {i}"),
            )
        })?;
        let (label_tok, rest) = if line.starts_with(' ') || line.is_empty() {
            ("", line)
        } else {
            match line.find(|c: char| c.is_whitespace()) {
                Some(p) => (&line[..p], &line[p..]),
                None => (line, ""),
            }
        };
        if !label_tok.is_empty() {
            for tok in label_tok.split(',') {
                let l: usize = tok
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad label index {tok:?}")))?;
                if l >= k {
                    return Err(perr(
                        lineno,
                        format!("label index {l} out of range (K={k})"),
                    ));
                }
                if labels.get(i, l) {
                    return Err(perr(lineno, format!("duplicate label index {l}")));
                }
                labels.set(i, l, true);
            }
        }
        let mut seen = HashSet::new();
        for tok in rest.split_whitespace() {
            let (idx, val) = tok.split_once(':').ok_or_else(|| {
                perr(
                    lineno,
                    format!("feature token {tok:?} is not `index:value`"),
                )
            })?;
            let j: usize = idx
                .parse()
                .map_err(|_| perr(lineno, format!("bad feature index {idx:?}")))?;
            if j >= f {
                return Err(perr(
                    lineno,
                    format!("feature index {j} out of range (F={f})"),
                ));
            }
            if !seen.insert(j) {
                return Err(perr(lineno, format!("duplicate feature index {j}")));
            }
            let v: f64 = val
                .parse()
                .map_err(|_| perr(lineno, format!("non-numeric feature value {val:?}")))?;
            if !v.is_finite() {
                return Err(perr(lineno, format!("non-finite feature value {val:?}")));
            }
            features[(i, j)] = v;
        }
    }
    for (extra, line) in lines.enumerate() {
        if !line.trim().is_empty() {
            return Err(perr(
                n + 2 + extra,
                "content after the declared number of instances",
            ));
        }
    }
    Dataset::new(features, labels)
}

/// Renders a dataset in the sparse text format. Unlabeled rows get an empty label list.
pub fn format_sparse(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        data.len(),
        data.num_features(),
        data.num_labels()
    );
    for i in 0..data.len() {
        if i < data.n_labeled() {
            let labels: Vec<String> = data
                .labels
                .index_list(i)
                .iter()
                .map(|l| l.to_string())
                .collect();
            out.push_str(&labels.join(","));
        }
        for j in 0..data.num_features() {
            let v = data.features[(i, j)];
            // Keep -0.0 so the round trip is bit-exact.
            if v.to_bits() != 0 {
                let _ = write!(out, " {j}:{}", fmt_real(v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sparse(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_sparse(data)).map_err(|e| EsmcError::io(path, e))
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a real matrix as CSV, preceded by optional `#` comment lines.
pub fn write_matrix_csv(
    m: &DMatrix<f64>,
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix_csv(m, comments)).map_err(|e| EsmcError::io(path, e))
}

pub fn format_matrix_csv(m: &DMatrix<f64>, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_real(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a CSV real matrix, skipping `#` comment lines and blank lines.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EsmcError::io(path, e))?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| perr(i + 1, format!("non-numeric value {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(perr(
                    i + 1,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Removes `floor(rate * #ones)` positive labels, chosen uniformly over all
/// positive cells. Returns the corrupted dataset and the removed
/// `(instance, label)` pairs in row-major order.
pub fn drop_labels(data: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, Vec<(usize, usize)>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(EsmcError::invalid(format!(
            "drop rate must lie in [0, 1), got {rate}"
        )));
    }
    if data.n_labeled() == 0 {
        return Err(EsmcError::invalid("drop_labels needs labeled instances"));
    }
    let ones: Vec<(usize, usize)> = data.labels.ones().collect();
    let count = (rate * ones.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, ones.len(), count).into_vec();
    picked.sort_unstable();
    let removed: Vec<(usize, usize)> = picked.into_iter().map(|p| ones[p]).collect();
    let mut out = data.clone();
    for &(i, k) in &removed {
        out.labels.set(i, k, false);
    }
    Ok((out, removed))
}

/// Keeps labels for a seeded `ceil(keep_fraction * n_labeled)` subset; the
/// other labeled rows become unlabeled. Kept rows come first, each block in
/// original order; pre-existing unlabeled rows stay at the end.
pub fn drop_instances(data: &Dataset, keep_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(EsmcError::invalid(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let n = data.n_labeled();
    let keep = ((keep_fraction * n as f64).ceil() as usize).min(n);
    if keep == 0 {
        return Err(EsmcError::invalid(
            "keep fraction leaves no labeled instance",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = sample(&mut rng, n, keep).into_vec();
    kept.sort_unstable();
    let mut is_kept = vec![false; n];
    for &i in &kept {
        is_kept[i] = true;
    }
    let order: Vec<usize> = kept
        .iter()
        .copied()
        .chain((0..n).filter(|&i| !is_kept[i]))
        .chain(n..data.len())
        .collect();
    Ok(Dataset {
        features: select_rows(&data.features, &order),
        labels: data.labels.select_rows(&kept),
    })
}

/// Splits the labeled rows into a seeded `ceil(test_fraction * n_labeled)`
/// test set and a training set, each in original order. Unlabeled rows stay
/// with the training set.
pub fn split_labeled(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EsmcError::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.n_labeled();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    if n_test >= n {
        return Err(EsmcError::invalid(format!(
            "test fraction {test_fraction} leaves no training instance out of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = sample(&mut rng, n, n_test).into_vec();
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    let train_rows: Vec<usize> = train.iter().copied().chain(n..data.len()).collect();
    let train_set = Dataset {
        features: select_rows(&data.features, &train_rows),
        labels: data.labels.select_rows(&train),
    };
    Ok((train_set, data.select_labeled(&test)))
}
