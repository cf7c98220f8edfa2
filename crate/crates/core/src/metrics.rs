//! Group fairness statistics over thresholded predictions.
//!
//! With `P_g = P(ŷ=1 | g)`:
//!
//! | metric | definition |
//! |---|---|
//! | disparate impact | `P_unpriv / P_priv` |
//! | statistical parity difference | `P_unpriv − P_priv` |
//! | equal opportunity difference | `TPR_unpriv − TPR_priv` |
//! | average odds difference | `½[(FPR_unpriv − FPR_priv) + (TPR_unpriv − TPR_priv)]` |
//!
//! A metric whose denominator is zero is reported as undefined rather than
//! as a sentinel value.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("group coverage: {0}")]
    GroupCoverage(String),
    #[error("input lengths differ: {0}")]
    Length(String),
}

/// One thresholded prediction with its label and group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPrediction {
    pub predicted: bool,
    pub actual: bool,
    pub privileged: bool,
}

/// Pairs probabilities with labels and groups, thresholding at `threshold`
/// (`p >= threshold` predicts the positive class).
pub fn threshold_predictions(
    probabilities: &[f64],
    labels: &[u8],
    privileged: &[bool],
    threshold: f64,
) -> Result<Vec<LabeledPrediction>, MetricsError> {
    if probabilities.len() != labels.len() || labels.len() != privileged.len() {
        return Err(MetricsError::Length(format!(
            "{} probabilities, {} labels, {} group flags",
            probabilities.len(),
            labels.len(),
            privileged.len()
        )));
    }
    Ok(probabilities
        .iter()
        .zip(labels)
        .zip(privileged)
        .map(|((&p, &y), &g)| LabeledPrediction {
            predicted: p >= threshold,
            actual: y == 1,
            privileged: g,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: u64, den: u64) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn positive_rate(&self) -> Option<f64> {
        Self::ratio(self.tp + self.fp, self.total())
    }

    pub fn tpr(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    fn add(&mut self, p: &LabeledPrediction) {
        match (p.predicted, p.actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub privileged: Confusion,
    pub unprivileged: Confusion,
}

impl GroupConfusion {
    pub fn from_predictions(preds: &[LabeledPrediction]) -> Self {
        let mut gc = Self::default();
        for p in preds {
            if p.privileged {
                gc.privileged.add(p);
            } else {
                gc.unprivileged.add(p);
            }
        }
        gc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "lowercase")]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    fn from_option(v: Option<f64>) -> Self {
        v.map_or(MetricValue::Undefined, MetricValue::Defined)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Defined(v) => write!(f, "{v}"),
            MetricValue::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetricsReport {
    pub disparate_impact: MetricValue,
    pub statistical_parity_difference: MetricValue,
    pub equal_opportunity_difference: MetricValue,
    pub average_odds_difference: MetricValue,
    pub privileged_size: u64,
    pub unprivileged_size: u64,
}

pub const REPORT_COLUMNS: [&str; 6] = [
    "disparate_impact",
    "statistical_parity_difference",
    "equal_opportunity_difference",
    "average_odds_difference",
    "privileged_size",
    "unprivileged_size",
];

impl GroupMetricsReport {
    pub fn from_confusion(gc: &GroupConfusion) -> Result<Self, MetricsError> {
        let (p, u) = (&gc.privileged, &gc.unprivileged);
        if p.total() == 0 || u.total() == 0 {
            return Err(MetricsError::GroupCoverage(format!(
                "both groups must be present (privileged {}, unprivileged {})",
                p.total(),
                u.total()
            )));
        }
        let (pr_p, pr_u) = (p.positive_rate().expect("non-empty"), u.positive_rate().expect("non-empty"));
        let di = (pr_p > 0.0).then(|| pr_u / pr_p);
        let tpr_gap = u.tpr().zip(p.tpr()).map(|(a, b)| a - b);
        let fpr_gap = u.fpr().zip(p.fpr()).map(|(a, b)| a - b);
        Ok(Self {
            disparate_impact: MetricValue::from_option(di),
            statistical_parity_difference: MetricValue::Defined(pr_u - pr_p),
            equal_opportunity_difference: MetricValue::from_option(tpr_gap),
            average_odds_difference: MetricValue::from_option(fpr_gap.zip(tpr_gap).map(|(f, t)| 0.5 * (f + t))),
            privileged_size: p.total(),
            unprivileged_size: u.total(),
        })
    }

    /// `key = value` lines, one per metric.
    pub fn to_text(&self) -> String {
        self.values()
            .iter()
            .zip(REPORT_COLUMNS)
            .map(|(v, k)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Cell values in [`REPORT_COLUMNS`] order.
    pub fn values(&self) -> Vec<String> {
        vec![
            self.disparate_impact.to_string(),
            self.statistical_parity_difference.to_string(),
            self.equal_opportunity_difference.to_string(),
            self.average_odds_difference.to_string(),
            self.privileged_size.to_string(),
            self.unprivileged_size.to_string(),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        w.write_record(self.values())?;
        w.flush()?;
        Ok(())
    }
}

pub fn compute_group_metrics(preds: &[LabeledPrediction]) -> Result<GroupMetricsReport, MetricsError> {
    GroupMetricsReport::from_confusion(&GroupConfusion::from_predictions(preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(predicted: bool, actual: bool, privileged: bool) -> LabeledPrediction {
        LabeledPrediction {
            predicted,
            actual,
            privileged,
        }
    }

    #[test]
    fn identical_groups_are_parity() {
        let mut v = Vec::new();
        for g in [true, false] {
            v.extend([pred(true, true, g), pred(false, true, g), pred(true, false, g), pred(false, false, g)]);
        }
        let r = compute_group_metrics(&v).unwrap();
        assert_eq!(r.disparate_impact, MetricValue::Defined(1.0));
        assert_eq!(r.statistical_parity_difference, MetricValue::Defined(0.0));
        assert_eq!(r.equal_opportunity_difference, MetricValue::Defined(0.0));
        assert_eq!(r.average_odds_difference, MetricValue::Defined(0.0));
    }

    #[test]
    fn hand_counted_rates() {
        let mut v = Vec::new();
        v.extend((0..20).map(|i| pred(i < 10, i % 2 == 0, true)));
        v.extend((0..20).map(|i| pred(i < 5, i % 2 == 0, false)));
        let r = compute_group_metrics(&v).unwrap();
        assert_eq!(r.disparate_impact, MetricValue::Defined(0.5));
        assert_eq!(r.statistical_parity_difference, MetricValue::Defined(-0.25));
        assert_eq!(r.privileged_size, 20);
    }

    #[test]
    fn no_unprivileged_positives_leaves_eod_undefined() {
        let v = vec![
            pred(true, true, true),
            pred(false, false, true),
            pred(true, false, false),
            pred(false, false, false),
        ];
        let r = compute_group_metrics(&v).unwrap();
        assert_eq!(r.equal_opportunity_difference, MetricValue::Undefined);
        assert_eq!(r.average_odds_difference, MetricValue::Undefined);
        assert!(r.disparate_impact.is_defined());
        assert!(r.statistical_parity_difference.is_defined());
        assert!(r.to_text().contains("equal_opportunity_difference = undefined"));
    }

    #[test]
    fn single_group_is_rejected() {
        let v = vec![pred(true, true, true), pred(false, false, true)];
        assert!(matches!(compute_group_metrics(&v), Err(MetricsError::GroupCoverage(_))));
    }

    #[test]
    fn thresholding_is_inclusive() {
        let p = threshold_predictions(&[0.5, 0.49], &[1, 0], &[true, false], 0.5).unwrap();
        assert!(p[0].predicted);
        assert!(!p[1].predicted);
        assert!(threshold_predictions(&[0.5], &[1, 0], &[true], 0.5).is_err());
    }
}
