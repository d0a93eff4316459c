//! Classification metrics and aggregation statistics.
//!
//! Macro-F1 is the unweighted mean of per-label F1 scores, so class
//! imbalance does not skew the figure. Unparsed predictions count as
//! wrong for every class: they add a false negative to the gold label
//! and a false positive to no label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Prediction;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("baseline is zero")]
    ZeroBaseline,
    #[error("gold label `{0}` is not in the label set")]
    UnknownGold(String),
    #[error("predicted label `{0}` is not in the label set")]
    UnknownPrediction(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Per-label precision/recall/F1. Zero denominators yield 0 components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-label true-positive/false-positive/false-negative counts plus the
/// number of unparsed predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub per_label: BTreeMap<String, LabelCounts>,
    pub unparsed: usize,
    pub scored: usize,
}

impl ConfusionTable {
    pub fn new(labels: &[String]) -> Self {
        Self {
            per_label: labels
                .iter()
                .map(|l| (l.clone(), LabelCounts::default()))
                .collect(),
            unparsed: 0,
            scored: 0,
        }
    }

    pub fn from_predictions(
        preds: &[(Prediction, String)],
        labels: &[String],
    ) -> Result<Self, MetricsError> {
        if preds.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut table = Self::new(labels);
        for (pred, gold) in preds {
            table.record(pred, gold)?;
        }
        Ok(table)
    }

    pub fn record(&mut self, pred: &Prediction, gold: &str) -> Result<(), MetricsError> {
        if !self.per_label.contains_key(gold) {
            return Err(MetricsError::UnknownGold(gold.to_string()));
        }
        match pred {
            Prediction::Label(l) if l == gold => {
                self.per_label.get_mut(gold).unwrap().tp += 1;
            }
            Prediction::Label(l) => {
                let counts = self
                    .per_label
                    .get_mut(l)
                    .ok_or_else(|| MetricsError::UnknownPrediction(l.clone()))?;
                counts.fp += 1;
                self.per_label.get_mut(gold).unwrap().fn_ += 1;
            }
            Prediction::Unparsed => {
                self.per_label.get_mut(gold).unwrap().fn_ += 1;
                self.unparsed += 1;
            }
        }
        self.scored += 1;
        Ok(())
    }

    pub fn label_metrics(&self) -> BTreeMap<String, LabelMetrics> {
        self.per_label
            .iter()
            .map(|(name, c)| {
                let precision = ratio(c.tp, c.tp + c.fp);
                let recall = ratio(c.tp, c.tp + c.fn_);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                let metrics = LabelMetrics {
                    precision,
                    recall,
                    f1,
                    support: c.tp + c.fn_,
                };
                (name.clone(), metrics)
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let metrics = self.label_metrics();
        let sum: f64 = metrics.values().map(|m| m.f1).sum();
        sum / metrics.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-F1 over a list of (prediction, gold) pairs.
pub fn macro_f1(preds: &[(Prediction, String)], labels: &[String]) -> Result<f64, MetricsError> {
    Ok(ConfusionTable::from_predictions(preds, labels)?.macro_f1())
}

/// Arithmetic mean and sample standard deviation (n−1 denominator);
/// the std is 0 when only one value is given.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    Ok((mean, std))
}

/// Relative improvement of `ours` over `baseline`, in percent.
pub fn relative_improvement(ours: f64, baseline: f64) -> Result<f64, MetricsError> {
    if baseline == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(100.0 * (ours - baseline) / baseline)
}
