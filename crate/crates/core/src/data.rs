//! Tabular ingestion: schema, cleaning, encoding, splitting, normalization.
//!
//! A schema is a small TOML file:
//!
//! ```toml
//! name = "adult"
//! missing = ["?"]
//! protected = "sex"          # the audited protected column
//!
//! [[columns]]
//! name = "age"
//! kind = "numeric"
//!
//! [[columns]]
//! name = "sex"
//! kind = "protected"
//! privileged = "Male"
//!
//! [[columns]]
//! name = "income"
//! kind = "label"
//! positive = ">50K"
//!
//! [[filters]]               # optional row filters, all must hold
//! column = "days_b_screening_arrest"
//! op = "<="
//! value = "30"
//! ```
//!
//! Rows failing a filter, or with a missing value in any schema column, are
//! dropped. Categorical columns are one-hot encoded over every observed
//! value (no reference category is dropped). Protected columns become a
//! single 0/1 column, 1 meaning privileged. Numeric columns are z-scored with
//! training-split statistics; constant numeric columns are dropped.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("normalization stats do not match this feature layout: {0}")]
    StatsMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported dataset file version {0}")]
    Version(String),
    #[error("corrupt dataset file: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    Protected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Privileged value of a protected column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged: Option<String>,
    /// Positive value of the label column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub op: FilterOp,
    pub value: String,
}

impl RowFilter {
    /// Numeric comparison when both sides parse as numbers, string
    /// (in)equality otherwise. A missing cell never passes.
    fn keeps(&self, cell: &str) -> bool {
        let cell = cell.trim();
        if cell.is_empty() {
            return false;
        }
        match (cell.parse::<f64>(), self.value.parse::<f64>()) {
            (Ok(a), Ok(b)) => match self.op {
                FilterOp::Eq => a == b,
                FilterOp::Ne => a != b,
                FilterOp::Lt => a < b,
                FilterOp::Le => a <= b,
                FilterOp::Gt => a > b,
                FilterOp::Ge => a >= b,
            },
            _ => match self.op {
                FilterOp::Eq => cell == self.value,
                FilterOp::Ne => cell != self.value,
                _ => false,
            },
        }
    }
}

fn default_missing() -> Vec<String> {
    vec!["?".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    #[serde(default)]
    pub name: String,
    /// Cell values treated as missing, in addition to the empty string.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Name of the protected column under audit.
    pub protected: String,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
}

impl DatasetSchema {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let schema: Self = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Same schema with a different audited protected column.
    pub fn with_protected(mut self, column: &str) -> Result<Self, DataError> {
        self.protected = column.to_string();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let labels: Vec<_> = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).collect();
        if labels.len() != 1 {
            return Err(DataError::Schema(format!(
                "exactly one label column required, found {}",
                labels.len()
            )));
        }
        if labels[0].positive.is_none() {
            return Err(DataError::Schema(format!("label column '{}' needs a positive value", labels[0].name)));
        }
        let protected: Vec<_> = self.columns.iter().filter(|c| c.kind == ColumnKind::Protected).collect();
        if protected.is_empty() {
            return Err(DataError::Schema("no protected column designated".into()));
        }
        if let Some(c) = protected.iter().find(|c| c.privileged.is_none()) {
            return Err(DataError::Schema(format!("protected column '{}' needs a privileged value", c.name)));
        }
        if !protected.iter().any(|c| c.name == self.protected) {
            return Err(DataError::Schema(format!(
                "'{}' is not declared as a protected column",
                self.protected
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(&c.name) {
                return Err(DataError::Schema(format!("column '{}' declared twice", c.name)));
            }
        }
        Ok(())
    }

    fn label(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    OneHot,
    Protected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub kind: FeatureKind,
    pub mean: f64,
    pub std: f64,
}

/// Per-feature affine normalization. Only numeric features are rescaled;
/// the rest carry mean 0 and std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: Vec<FeatureStats>,
}

impl Normalizer {
    pub fn identity(names: &[String]) -> Self {
        Self {
            features: names
                .iter()
                .map(|n| FeatureStats {
                    name: n.clone(),
                    kind: FeatureKind::Numeric,
                    mean: 0.0,
                    std: 1.0,
                })
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    fn check(&self, layout: &[String], x: &[f64]) -> Result<(), DataError> {
        if layout.len() != self.features.len() || layout.iter().zip(&self.features).any(|(a, f)| a != &f.name) {
            return Err(DataError::StatsMismatch(format!(
                "stats cover {} features, input layout has {}",
                self.features.len(),
                layout.len()
            )));
        }
        if x.len() != layout.len() {
            return Err(DataError::StatsMismatch(format!(
                "vector length {} vs layout width {}",
                x.len(),
                layout.len()
            )));
        }
        Ok(())
    }

    /// Normalizes a raw encoded vector whose columns are named by `layout`.
    pub fn apply(&self, layout: &[String], x: &[f64]) -> Result<Vec<f64>, DataError> {
        self.check(layout, x)?;
        Ok(x.iter().zip(&self.features).map(|(v, f)| (v - f.mean) / f.std).collect())
    }

    pub fn invert(&self, layout: &[String], z: &[f64]) -> Result<Vec<f64>, DataError> {
        self.check(layout, z)?;
        Ok(z.iter().zip(&self.features).map(|(v, f)| v * f.std + f.mean).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Encoded, normalized rows of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub feature_names: Vec<String>,
    /// `[rows, input_dim]`.
    pub features: Tensor,
    pub labels: Vec<u8>,
    pub privileged: Vec<bool>,
    /// Zero-based data-row index in the source file.
    pub example_ids: Vec<u64>,
    pub protected_index: usize,
    pub normalizer: Normalizer,
}

impl Dataset {
    /// Assembles a dataset from already-normalized rows. The group of each
    /// row is read from its protected column (`1.0` is privileged).
    pub fn from_rows(
        split: Split,
        rows: &[Vec<f64>],
        labels: Vec<u8>,
        protected_index: usize,
    ) -> Result<Self, DataError> {
        let features = Tensor::from_rows(rows).map_err(|e| DataError::Data(e.to_string()))?;
        let n = rows.len();
        if labels.len() != n {
            return Err(DataError::Data("label count differs from row count".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(DataError::Data("labels must be 0 or 1".into()));
        }
        let dim = features.shape()[1];
        if protected_index >= dim {
            return Err(DataError::Schema(format!("protected index {protected_index} outside width {dim}")));
        }
        let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        Ok(Self {
            split,
            privileged: rows.iter().map(|r| r[protected_index] == 1.0).collect(),
            feature_names: names.clone(),
            features,
            labels,
            example_ids: (0..n as u64).collect(),
            protected_index,
            normalizer: Normalizer::identity(&names),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows `indices` as a `[k, input_dim]` matrix.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), d], data).expect("consistent width")
    }

    pub fn protected_name(&self) -> &str {
        &self.feature_names[self.protected_index]
    }
}

/// Source file, schema and split parameters of an ingest run.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub split_seed: u64,
    pub test_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            split_seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub total_rows: usize,
    pub filtered_rows: usize,
    pub missing_rows: usize,
    pub dropped_constant: Vec<String>,
}

impl IngestReport {
    pub fn cleaned_rows(&self) -> usize {
        self.total_rows - self.filtered_rows - self.missing_rows
    }
}

struct CleanRow {
    id: u64,
    cells: Vec<String>,
}

/// Reads `path` and returns the `(train, test)` split plus cleaning counts.
pub fn ingest(
    path: &Path,
    schema: &DatasetSchema,
    opts: &IngestOptions,
) -> Result<(Dataset, Dataset, IngestReport), DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    ingest_reader(file, schema, opts)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    schema: &DatasetSchema,
    opts: &IngestOptions,
) -> Result<(Dataset, Dataset, IngestReport), DataError> {
    schema.validate()?;
    if !(opts.test_fraction > 0.0 && opts.test_fraction < 1.0) {
        return Err(DataError::Data(format!(
            "test fraction {} outside (0, 1)",
            opts.test_fraction
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    // first occurrence wins for duplicated header names
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.entry(h.trim()).or_insert(i);
    }
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DataError::Schema(format!("column '{name}' not found in CSV header")))
    };
    let col_idx: Vec<usize> = schema.columns.iter().map(|c| lookup(&c.name)).collect::<Result<_, _>>()?;
    let filter_idx: Vec<usize> = schema.filters.iter().map(|f| lookup(&f.column)).collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut report = IngestReport {
        total_rows: 0,
        filtered_rows: 0,
        missing_rows: 0,
        dropped_constant: Vec::new(),
    };
    for (id, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.total_rows += 1;
        let cell = |i: usize| rec.get(i).unwrap_or("").trim();
        if !schema.filters.iter().zip(&filter_idx).all(|(f, &i)| f.keeps(cell(i))) {
            report.filtered_rows += 1;
            continue;
        }
        let cells: Vec<String> = col_idx.iter().map(|&i| cell(i).to_string()).collect();
        if cells.iter().any(|c| c.is_empty() || schema.missing.iter().any(|m| m == c)) {
            report.missing_rows += 1;
            continue;
        }
        rows.push(CleanRow { id: id as u64, cells });
    }
    if rows.is_empty() {
        return Err(DataError::Data("no rows left after cleaning".into()));
    }

    let encoder = Encoder::fit(schema, &rows)?;
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| encoder.encode(r)).collect::<Result<_, _>>()?;
    let labels: Vec<u8> = rows.iter().map(|r| encoder.label(r)).collect();

    let n = rows.len();
    let n_test = (n as f64 * opts.test_fraction).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DataError::Data(format!("cannot split {n} rows with test fraction {}", opts.test_fraction)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.split_seed));
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    // fit on train only; constant numeric columns are dropped
    let width = encoder.names.len();
    let mut keep = Vec::with_capacity(width);
    let mut stats = Vec::with_capacity(width);
    for j in 0..width {
        let kind = encoder.kinds[j];
        if kind != FeatureKind::Numeric {
            keep.push(j);
            stats.push(FeatureStats {
                name: encoder.names[j].clone(),
                kind,
                mean: 0.0,
                std: 1.0,
            });
            continue;
        }
        let m = train_idx.len() as f64;
        let mean = train_idx.iter().map(|&i| raw[i][j]).sum::<f64>() / m;
        let var = train_idx.iter().map(|&i| (raw[i][j] - mean).powi(2)).sum::<f64>() / m;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            log::warn!("dropping constant column '{}'", encoder.names[j]);
            report.dropped_constant.push(encoder.names[j].clone());
            continue;
        }
        keep.push(j);
        stats.push(FeatureStats {
            name: encoder.names[j].clone(),
            kind,
            mean,
            std,
        });
    }
    let normalizer = Normalizer { features: stats };
    let names = normalizer.names();
    let protected_name = schema.protected.clone();
    let protected_index = names
        .iter()
        .position(|n| *n == protected_name)
        .ok_or_else(|| DataError::Data(format!("protected column '{protected_name}' is constant")))?;

    let build = |split: Split, idx: &[usize]| -> Result<Dataset, DataError> {
        let mut data = Vec::with_capacity(idx.len() * names.len());
        let mut privileged = Vec::with_capacity(idx.len());
        for &i in idx {
            let row: Vec<f64> = keep.iter().map(|&j| raw[i][j]).collect();
            privileged.push(row[protected_index] == 1.0);
            data.extend(normalizer.apply(&names, &row)?);
        }
        Ok(Dataset {
            split,
            feature_names: names.clone(),
            features: Tensor::new(vec![idx.len(), names.len()], data).expect("width"),
            labels: idx.iter().map(|&i| labels[i]).collect(),
            privileged,
            example_ids: idx.iter().map(|&i| rows[i].id).collect(),
            protected_index,
            normalizer: normalizer.clone(),
        })
    };
    let train = build(Split::Train, &train_idx)?;
    let test = build(Split::Test, &test_idx)?;
    Ok((train, test, report))
}

struct Encoder {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    columns: Vec<ColumnEncoding>,
    label_col: usize,
    positive: String,
}

enum ColumnEncoding {
    Numeric,
    OneHot(Vec<String>),
    Binary(String),
    Skip,
}

impl Encoder {
    fn fit(schema: &DatasetSchema, rows: &[CleanRow]) -> Result<Self, DataError> {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut columns = Vec::new();
        let mut label_col = 0;
        for (ci, col) in schema.columns.iter().enumerate() {
            let domain = || rows.iter().map(|r| r.cells[ci].clone()).collect::<BTreeSet<_>>();
            match col.kind {
                ColumnKind::Numeric => {
                    names.push(col.name.clone());
                    kinds.push(FeatureKind::Numeric);
                    columns.push(ColumnEncoding::Numeric);
                }
                ColumnKind::Categorical => {
                    let values: Vec<String> = domain().into_iter().collect();
                    for v in &values {
                        names.push(format!("{}={}", col.name, v));
                        kinds.push(FeatureKind::OneHot);
                    }
                    columns.push(ColumnEncoding::OneHot(values));
                }
                ColumnKind::Protected => {
                    let privileged = col.privileged.clone().expect("validated");
                    if !domain().contains(&privileged) {
                        return Err(DataError::Schema(format!(
                            "privileged value '{privileged}' never occurs in column '{}'",
                            col.name
                        )));
                    }
                    names.push(col.name.clone());
                    kinds.push(FeatureKind::Protected);
                    columns.push(ColumnEncoding::Binary(privileged));
                }
                ColumnKind::Label => {
                    label_col = ci;
                    columns.push(ColumnEncoding::Skip);
                }
            }
        }
        let positive = schema.label().positive.clone().expect("validated");
        if !rows.iter().any(|r| r.cells[label_col] == positive) {
            return Err(DataError::Schema(format!("positive label '{positive}' never occurs")));
        }
        Ok(Self {
            names,
            kinds,
            columns,
            label_col,
            positive,
        })
    }

    fn encode(&self, row: &CleanRow) -> Result<Vec<f64>, DataError> {
        let mut out = Vec::with_capacity(self.names.len());
        for (cell, enc) in row.cells.iter().zip(&self.columns) {
            match enc {
                ColumnEncoding::Numeric => out.push(cell.parse::<f64>().map_err(|_| {
                    DataError::Data(format!("row {}: '{cell}' is not numeric", row.id))
                })?),
                ColumnEncoding::OneHot(values) => {
                    out.extend(values.iter().map(|v| if v == cell { 1.0 } else { 0.0 }))
                }
                ColumnEncoding::Binary(p) => out.push(if cell == p { 1.0 } else { 0.0 }),
                ColumnEncoding::Skip => {}
            }
        }
        Ok(out)
    }

    fn label(&self, row: &CleanRow) -> u8 {
        u8::from(row.cells[self.label_col] == self.positive)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    id: u64,
    label: u8,
    privileged: bool,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    kind: String,
    split: Split,
    protected_index: usize,
    normalization: Normalizer,
    rows: Vec<DatasetRow>,
}

/// Serializes a split in the versioned JSON format used for model files.
pub fn dataset_to_string(ds: &Dataset) -> String {
    let file = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        kind: "dataset".into(),
        split: ds.split,
        protected_index: ds.protected_index,
        normalization: ds.normalizer.clone(),
        rows: (0..ds.len())
            .map(|i| DatasetRow {
                id: ds.example_ids[i],
                label: ds.labels[i],
                privileged: ds.privileged[i],
                features: ds.row(i).to_vec(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn dataset_from_str(text: &str) -> Result<Dataset, DataError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| DataError::Corrupt(e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == DATASET_FORMAT_VERSION as u64 => {}
        _ => {
            return Err(DataError::Version(
                raw.get("format_version").map_or("missing".into(), |v| v.to_string()),
            ))
        }
    }
    let file: DatasetFile = serde_json::from_value(raw).map_err(|e| DataError::Corrupt(e.to_string()))?;
    if file.kind != "dataset" {
        return Err(DataError::Corrupt(format!("expected kind 'dataset', found '{}'", file.kind)));
    }
    let names = file.normalization.names();
    let width = names.len();
    if file.protected_index >= width {
        return Err(DataError::Corrupt("protected index out of range".into()));
    }
    let mut data = Vec::with_capacity(file.rows.len() * width);
    for r in &file.rows {
        if r.features.len() != width {
            return Err(DataError::Corrupt(format!("row {} has {} features, expected {width}", r.id, r.features.len())));
        }
        data.extend_from_slice(&r.features);
    }
    Ok(Dataset {
        split: file.split,
        feature_names: names,
        features: Tensor::new(vec![file.rows.len(), width], data).expect("width checked"),
        labels: file.rows.iter().map(|r| r.label).collect(),
        privileged: file.rows.iter().map(|r| r.privileged).collect(),
        example_ids: file.rows.iter().map(|r| r.id).collect(),
        protected_index: file.protected_index,
        normalizer: file.normalization,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, dataset_to_string(ds)).map_err(io_err(path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    dataset_from_str(&fs::read_to_string(path).map_err(io_err(path))?)
}
