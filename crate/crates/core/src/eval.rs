//! Proxy fairness labels, sensitivity distributions and ROC analysis.
//!
//! A test prediction is labelled "fair" when the unmitigated and mitigated
//! models agree on it and "unfair" when they disagree. The labels only
//! approximate fairness as defined by the mitigation and should not be
//! read as ground truth.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{ModelError, TrainedModel};
use crate::sensitivity::SensitivityResult;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("audit rows do not line up with proxy labels: {0}")]
    IdMismatch(String),
    #[error("ROC undefined: {0}")]
    SingleClass(String),
    #[error("{0}")]
    Config(String),
    #[error("output directory already holds results ({0}); pass --resume to reuse them")]
    Collision(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyClass {
    Fair,
    Unfair,
}

impl fmt::Display for ProxyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProxyClass::Fair => "fair",
            ProxyClass::Unfair => "unfair",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyLabel {
    pub example_id: u64,
    pub unmitigated: bool,
    pub mitigated: bool,
    pub class: ProxyClass,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProxyLabeling {
    pub labels: Vec<ProxyLabel>,
    pub matches: usize,
    pub mismatches: usize,
}

impl ProxyLabeling {
    pub fn from_predictions(ids: &[u64], unmitigated: &[bool], mitigated: &[bool]) -> Result<Self, HarnessError> {
        if ids.len() != unmitigated.len() || ids.len() != mitigated.len() {
            return Err(HarnessError::Dimension(format!(
                "{} ids, {} and {} predictions",
                ids.len(),
                unmitigated.len(),
                mitigated.len()
            )));
        }
        let labels: Vec<ProxyLabel> = ids
            .iter()
            .zip(unmitigated.iter().zip(mitigated))
            .map(|(&example_id, (&u, &m))| ProxyLabel {
                example_id,
                unmitigated: u,
                mitigated: m,
                class: if u == m { ProxyClass::Fair } else { ProxyClass::Unfair },
            })
            .collect();
        let matches = labels.iter().filter(|l| l.class == ProxyClass::Fair).count();
        Ok(Self {
            mismatches: labels.len() - matches,
            matches,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = ProxyClass> + '_ {
        self.labels.iter().map(|l| l.class)
    }

    /// Reads the layout written by [`ProxyLabeling::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(input);
        let (mut ids, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| HarnessError::Parse(e.to_string()))?;
            let field = |k: usize| rec.get(k).ok_or_else(|| HarnessError::Parse(format!("row {}: missing column {k}", i + 1)));
            ids.push(parse_cell::<u64>(field(0)?, i)?);
            a.push(parse_cell::<u8>(field(1)?, i)? == 1);
            b.push(parse_cell::<u8>(field(2)?, i)? == 1);
        }
        Self::from_predictions(&ids, &a, &b)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["example_id", "unmitigated_prediction", "mitigated_prediction", "proxy_label"])?;
        for l in &self.labels {
            w.write_record([
                l.example_id.to_string(),
                u8::from(l.unmitigated).to_string(),
                u8::from(l.mitigated).to_string(),
                l.class.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_cell<T: FromStr>(cell: &str, row: usize) -> Result<T, HarnessError> {
    cell.trim()
        .parse()
        .map_err(|_| HarnessError::Parse(format!("row {}: bad value '{cell}'", row + 1)))
}

/// Reads sensitivity rows from an audit CSV, locating columns by header name.
pub fn read_audit_csv<R: Read>(input: R) -> Result<Vec<SensitivityResult>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| HarnessError::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Parse(format!("audit csv lacks column '{name}'")))
    };
    let (id, pred, plain, smooth) = (col("example_id")?, col("prediction")?, col("plain_sensitivity")?, col("smooth_sensitivity")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Parse(e.to_string()))?;
        let get = |k: usize| rec.get(k).unwrap_or("");
        out.push(SensitivityResult {
            example_id: parse_cell(get(id), i)?,
            prediction: parse_cell(get(pred), i)?,
            plain: parse_cell(get(plain), i)?,
            smooth: parse_cell(get(smooth), i)?,
            per_sample: None,
        });
    }
    Ok(out)
}

/// Thresholds both models on `test` and labels each row by agreement.
pub fn build_proxy_labels(
    unmitigated: &TrainedModel,
    mitigated: &TrainedModel,
    test: &Dataset,
    threshold: f64,
) -> Result<ProxyLabeling, HarnessError> {
    for (name, m) in [("unmitigated", unmitigated), ("mitigated", mitigated)] {
        if m.network.input_dim() != test.input_dim() {
            return Err(HarnessError::Dimension(format!(
                "{name} model expects {} features, test split has {}",
                m.network.input_dim(),
                test.input_dim()
            )));
        }
    }
    let a: Vec<bool> = unmitigated
        .predict_rows(&test.features)?
        .iter()
        .map(|&p| p >= threshold)
        .collect();
    let b: Vec<bool> = mitigated
        .predict_rows(&test.features)?
        .iter()
        .map(|&p| p >= threshold)
        .collect();
    ProxyLabeling::from_predictions(&test.example_ids, &a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Plain,
    Smooth,
}

impl ScoreKind {
    pub fn of(self, r: &SensitivityResult) -> f64 {
        match self {
            ScoreKind::Plain => r.plain,
            ScoreKind::Smooth => r.smooth,
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Plain => "plain",
            ScoreKind::Smooth => "smooth",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(ScoreKind::Plain),
            "smooth" => Ok(ScoreKind::Smooth),
            other => Err(HarnessError::Config(format!("unknown score '{other}' (plain|smooth)"))),
        }
    }
}

fn aligned_scores(
    labeling: &ProxyLabeling,
    audits: &[SensitivityResult],
    score: ScoreKind,
) -> Result<Vec<(ProxyClass, f64)>, HarnessError> {
    if labeling.len() != audits.len() {
        return Err(HarnessError::IdMismatch(format!(
            "{} labels vs {} audits",
            labeling.len(),
            audits.len()
        )));
    }
    labeling
        .labels
        .iter()
        .zip(audits)
        .map(|(l, a)| {
            if l.example_id != a.example_id {
                Err(HarnessError::IdMismatch(format!(
                    "label for example {} paired with audit of example {}",
                    l.example_id, a.example_id
                )))
            } else {
                Ok((l.class, score.of(a)))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl ClassSummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                count: 0,
                mean: None,
                median: None,
            };
        }
        Self {
            count: values.len(),
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            median: Some(median(values)),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fair and unfair counts over shared, equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub fair: Vec<u64>,
    pub unfair: Vec<u64>,
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lower", "bin_upper", "fair_count", "unfair_count"])?;
        for i in 0..self.fair.len() {
            w.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                self.fair[i].to_string(),
                self.unfair[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityDistributions {
    pub score: ScoreKind,
    pub histogram: Histogram,
    pub fair: ClassSummary,
    pub unfair: ClassSummary,
}

pub fn sensitivity_distributions(
    labeling: &ProxyLabeling,
    audits: &[SensitivityResult],
    score: ScoreKind,
    bins: usize,
) -> Result<SensitivityDistributions, HarnessError> {
    if bins == 0 {
        return Err(HarnessError::Config("bin count must be positive".into()));
    }
    let pairs = aligned_scores(labeling, audits, score)?;
    let split = |c: ProxyClass| pairs.iter().filter(|p| p.0 == c).map(|p| p.1).collect::<Vec<_>>();
    let (fair, unfair) = (split(ProxyClass::Fair), split(ProxyClass::Unfair));

    let (mut lo, mut hi) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if pairs.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if lo == hi {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let bin_of = |v: f64| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
    let count = |vals: &[f64]| {
        let mut c = vec![0u64; bins];
        vals.iter().for_each(|&v| c[bin_of(v)] += 1);
        c
    };
    Ok(SensitivityDistributions {
        score,
        histogram: Histogram {
            edges,
            fair: count(&fair),
            unfair: count(&unfair),
        },
        fair: ClassSummary::of(&fair),
        unfair: ClassSummary::of(&unfair),
    })
}

/// ROC of a score used to flag the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one step per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    /// Trapezoidal area under `points`, computed in floating point.
    pub fn trapezoid(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr"])?;
        for (f, t) in &self.points {
            w.write_record([f.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ROC over every threshold. Higher scores mean "more likely positive"; equal
/// scores form a single step. The AUC is accumulated exactly in integer
/// counts and divided once.
pub fn roc_from_scores(scores: &[f64], positive: &[bool]) -> Result<RocCurve, HarnessError> {
    if scores.len() != positive.len() {
        return Err(HarnessError::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(HarnessError::SingleClass(format!("{p} positives and {n} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]].total_cmp(&s) == Ordering::Equal {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(RocCurve {
        points,
        auc: twice_area as f64 / (2 * p as u128 * n as u128) as f64,
        positives: p,
        negatives: n,
    })
}

/// ROC of sensitivity as a detector of proxy-"unfair" predictions.
pub fn roc(labeling: &ProxyLabeling, audits: &[SensitivityResult], score: ScoreKind) -> Result<RocCurve, HarnessError> {
    let pairs = aligned_scores(labeling, audits, score)?;
    let scores: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let unfair: Vec<bool> = pairs.iter().map(|p| p.0 == ProxyClass::Unfair).collect();
    roc_from_scores(&scores, &unfair)
}
