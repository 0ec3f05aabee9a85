//! Classification metrics, Spearman rank correlation, workflow ranking and
//! report assembly.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    build_report, BuildRecord, EvaluationReport, HistogramBin, RankingSummary, ReportInputs, Scored, TestPrediction,
    VariantPredictions, VariantReport,
};

/// Rendered in place of metrics whose denominator is zero.
pub const UNDEFINED: &str = "n/a";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("before value is zero")]
    ZeroBefore,
    #[error("{instance_id}: fewer than 2 workflows with both predicted and true pass rates")]
    TooFewWorkflows { instance_id: String },
    #[error("{instance_id}: {message}")]
    Coverage { instance_id: String, message: String },
}

/// Serializes `Option<f64>` as a number or `"n/a"`.
pub mod undefined_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str(super::UNDEFINED),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Some(v)),
            Raw::Str(s) if s == super::UNDEFINED => Ok(None),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"n/a\", got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Counts with `true` as the positive class.
pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionCounts, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        counts.add(p, l);
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(with = "undefined_marker")]
    pub accuracy: Option<f64>,
    #[serde(with = "undefined_marker")]
    pub precision: Option<f64>,
    #[serde(with = "undefined_marker")]
    pub recall: Option<f64>,
    #[serde(with = "undefined_marker")]
    pub f1: Option<f64>,
    #[serde(with = "undefined_marker")]
    pub specificity: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    MetricSet {
        accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        precision,
        recall,
        f1: f1_score(precision, recall),
        specificity: ratio(tn, tn + fp),
    }
}

/// Harmonic mean; undefined when either input is or when both are zero.
pub fn f1_score(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    ratio(2.0 * p * r, p + r)
}

/// Percentage change from `before` to `after`.
pub fn relative_change(before: f64, after: f64) -> Result<f64, EvalError> {
    if before == 0.0 {
        return Err(EvalError::ZeroBefore);
    }
    Ok((after - before) / before * 100.0)
}

/// 1-based ranks; tied values share the mean of their positions.
/// `descending` gives rank 1 to the largest value.
pub fn average_ranks(values: &[f64], descending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i+1..=j share their mean.
        let mean = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mean;
        }
        i = j;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks. `None` when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooFew(xs.len()));
    }
    Ok(pearson(&average_ranks(xs, false), &average_ranks(ys, false)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub instance_id: String,
    pub predicted_rates: BTreeMap<String, f64>,
    pub true_rates: BTreeMap<String, f64>,
    pub predicted_ranks: BTreeMap<String, f64>,
    pub true_ranks: BTreeMap<String, f64>,
    #[serde(with = "undefined_marker")]
    pub rho: Option<f64>,
}

impl RankingResult {
    /// Both sides order the workflows identically, ties included.
    pub fn perfectly_aligned(&self) -> bool {
        self.predicted_ranks == self.true_ranks
    }
}

/// Ranks workflows by decreasing rate on each side (rank 1 is best) over
/// the workflows present on both sides.
pub fn rank_workflows(
    instance_id: &str,
    rates: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
) -> Result<RankingResult, EvalError> {
    let common: Vec<&String> = rates.keys().filter(|k| truth.contains_key(*k)).collect();
    if common.len() < 2 {
        return Err(EvalError::TooFewWorkflows {
            instance_id: instance_id.to_string(),
        });
    }
    let predicted: Vec<f64> = common.iter().map(|k| rates[*k]).collect();
    let actual: Vec<f64> = common.iter().map(|k| truth[*k]).collect();
    let p_ranks = average_ranks(&predicted, true);
    let t_ranks = average_ranks(&actual, true);
    let rho = spearman(&p_ranks, &t_ranks)?;
    let to_map =
        |vals: &[f64]| -> BTreeMap<String, f64> { common.iter().zip(vals).map(|(k, v)| ((*k).clone(), *v)).collect() };
    Ok(RankingResult {
        instance_id: instance_id.to_string(),
        predicted_rates: to_map(&predicted),
        true_rates: to_map(&actual),
        predicted_ranks: to_map(&p_ranks),
        true_ranks: to_map(&t_ranks),
        rho,
    })
}
