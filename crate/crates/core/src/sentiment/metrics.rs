use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SentimentLabel;
use crate::error::{Error, Result};

/// Rows are gold labels, columns predictions, both in [`SentimentLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: SentimentLabel, predicted: SentimentLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Gold support of class `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Predicted support of class `c`.
    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Metrics with precision/recall of 0 when their denominator is 0.
    pub fn evaluation(&self) -> Evaluation {
        let total = self.total();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_class: [ClassMetrics; 3] = std::array::from_fn(|c| {
            let tp = self.counts[c][c];
            let precision = ratio(tp, self.col_sum(c));
            let recall = ratio(tp, self.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: self.row_sum(c),
            }
        });
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if total == 0 {
                return 0.0;
            }
            per_class
                .iter()
                .map(|m| m.support as f64 / total as f64 * f(m))
                .sum()
        };
        Evaluation {
            confusion: *self,
            accuracy: ratio(self.trace(), total),
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
            per_class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy and support-weighted precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: [ClassMetrics; 3],
}

/// Compares predictions with gold labels; both must cover the same ids.
pub fn evaluate(
    predictions: &[(String, SentimentLabel)],
    gold: &[(String, SentimentLabel)],
) -> Result<Evaluation> {
    let pred: BTreeMap<&str, SentimentLabel> =
        predictions.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let truth: BTreeMap<&str, SentimentLabel> =
        gold.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    if pred.len() != predictions.len() || truth.len() != gold.len() {
        return Err(Error::IdMismatch("duplicate comment ids".into()));
    }
    let pk: BTreeSet<&str> = pred.keys().copied().collect();
    let gk: BTreeSet<&str> = truth.keys().copied().collect();
    if pk != gk {
        let missing: Vec<_> = gk.difference(&pk).take(5).collect();
        let extra: Vec<_> = pk.difference(&gk).take(5).collect();
        return Err(Error::IdMismatch(format!(
            "no prediction for {missing:?}; no gold label for {extra:?}"
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (id, g) in &truth {
        cm.add(*g, pred[id]);
    }
    Ok(cm.evaluation())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BenchmarkRow {
    pub fn new(method: impl Into<String>, e: &Evaluation) -> Self {
        BenchmarkRow {
            method: method.into(),
            accuracy: e.accuracy,
            precision: e.precision,
            recall: e.recall,
            f1: e.f1,
        }
    }
}

/// `method,accuracy,precision,recall,f1` with four decimals.
pub fn write_benchmark_csv(path: impl AsRef<Path>, rows: &[BenchmarkRow]) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["method", "accuracy", "precision", "recall", "f1"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.precision),
            format!("{:.4}", r.recall),
            format!("{:.4}", r.f1),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_benchmark_csv(path: impl AsRef<Path>) -> Result<Vec<BenchmarkRow>> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

/// 3×3 matrix with `gold\predicted` header.
pub fn write_confusion_csv(path: impl AsRef<Path>, cm: &ConfusionMatrix) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["gold\\predicted".to_string()];
    header.extend(SentimentLabel::ALL.iter().map(|l| l.to_string()));
    w.write_record(&header).map_err(err)?;
    for (i, l) in SentimentLabel::ALL.iter().enumerate() {
        let mut row = vec![l.to_string()];
        row.extend(cm.counts[i].iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
