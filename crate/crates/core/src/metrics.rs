//! Confusion matrix, per-class scores, and model-size comparison reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        ConfusionMatrix::default()
    }

    pub fn add(&mut self, truth: ClassLabel, pred: ClassLabel) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn count(&self, truth: ClassLabel, pred: ClassLabel) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// (TP, FP, FN, TN) for one class: TP=diag, FP=col-diag, FN=row-diag,
    /// TN=rest.
    pub fn binary_counts(&self, class: ClassLabel) -> (u64, u64, u64, u64) {
        let k = class.index();
        let tp = self.counts[k][k];
        let fp: u64 = (0..NUM_CLASSES).filter(|&i| i != k).map(|i| self.counts[i][k]).sum();
        let fn_: u64 = (0..NUM_CLASSES).filter(|&j| j != k).map(|j| self.counts[k][j]).sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }
}

/// Accumulate a confusion matrix from parallel label lists.
pub fn confusion(pred: &[ClassLabel], truth: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "label list lengths differ: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::new();
    for (&p, &t) in pred.iter().zip(truth) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Recall, TP/(TP+FN).
    pub sensitivity: f64,
    /// TP/(TP+FP).
    pub precision: f64,
    /// 2TP/(2TP+FP+FN).
    pub f1: f64,
    /// One-vs-rest accuracy, (TP+TN)/total.
    pub accuracy: f64,
    /// True-class count.
    pub support: u64,
    /// Set when a zero denominator forced a score to 0.
    pub degenerate: bool,
}

/// Whole-run report; serializes with stable key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    /// trace/total over all classes.
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(default)]
    pub params: Option<ParamReport>,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class sensitivity/precision/F1 and global trace/total accuracy.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut f1_sum = 0.0;
    for class in ClassLabel::ALL {
        let (tp, fp, fn_, tn) = cm.binary_counts(class);
        let mut degenerate = false;
        let sensitivity = ratio(tp, tp + fn_, &mut degenerate);
        let precision = ratio(tp, tp + fp, &mut degenerate);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_, &mut degenerate);
        let accuracy = (tp + tn) as f64 / total as f64;
        f1_sum += f1;
        per_class.insert(
            class.name().to_string(),
            ClassMetrics { sensitivity, precision, f1, accuracy, support: tp + fn_, degenerate },
        );
    }
    Ok(MetricReport {
        per_class,
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: f1_sum / NUM_CLASSES as f64,
        params: None,
    })
}

impl MetricReport {
    /// Aligned table in the usual layout: class rows with Sensitivity,
    /// Precision, F1-score columns, then the overall accuracy.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<6} {:>11} {:>10} {:>9}\n",
            "Class", "Sensitivity", "Precision", "F1-score"
        ));
        for (name, m) in &self.per_class {
            out.push_str(&format!(
                "{:<6} {:>11.4} {:>10.4} {:>9.4}\n",
                name, m.sensitivity, m.precision, m.f1
            ));
        }
        out.push_str(&format!("Accuracy = {:.2}%\n", self.accuracy * 100.0));
        out
    }
}

/// Per-layer parameter counts of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub by_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCounts {
    pub fn new(by_layer: Vec<(String, usize)>) -> Self {
        let total = by_layer.iter().map(|(_, n)| n).sum();
        ParamCounts { by_layer, total }
    }
}

/// Size comparison of model A against baseline B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub model: ParamCounts,
    pub baseline: ParamCounts,
    /// (1 - A/B) · 100.
    pub reduction_pct: f64,
}

/// Compare parameter counts; `baseline` is the wider reference stack.
pub fn param_report(model: ParamCounts, baseline: ParamCounts) -> ParamReport {
    let reduction_pct = (1.0 - model.total as f64 / baseline.total as f64) * 100.0;
    ParamReport { model, baseline, reduction_pct }
}
