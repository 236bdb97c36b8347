use crate::error::{Error, Result};

/// Binary classification metrics with depression (label 1) as the positive class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    /// Set for every ratio whose denominator was zero (reported as 0).
    pub undefined: Undefined,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Undefined {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub specificity: bool,
}

impl Undefined {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.specificity
    }
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 5] = ["precision", "recall", "f1", "accuracy", "specificity"];

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::InvalidArgument(
                "metrics of an empty prediction set".into(),
            ));
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, p_undef) = ratio(tp, tp + fp);
        let (recall, r_undef) = ratio(tp, tp + fn_);
        let (specificity, s_undef) = ratio(tn, tn + fp);
        let (f1, f_undef) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
            specificity,
            undefined: Undefined {
                precision: p_undef,
                recall: r_undef,
                f1: f_undef,
                specificity: s_undef,
            },
        })
    }

    /// Metric value by name (see [`METRIC_NAMES`]).
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "accuracy" => self.accuracy,
            "specificity" => self.specificity,
            _ => return None,
        })
    }
}

/// Confusion counts and derived metrics for binary predictions.
pub fn evaluate_metrics(preds: &[usize], labels: &[usize]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("non-binary class {bad}")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Metrics::from_counts(tp, fp, tn, fn_)
}

/// Class with the larger logit; ties go to control (0).
pub fn argmax_prediction(logits: &[f64]) -> usize {
    usize::from(logits[1] > logits[0])
}
