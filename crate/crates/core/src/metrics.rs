//! Segmentation metrics: confusion matrices, per-class precision/recall/F1
//! and macro means.
//!
//! Macro convention: per-sample macro scores average over the classes
//! present in that sample's ground truth; the headline `macro_*` fields are
//! the mean of those per-sample scores over the evaluated split. Per-class
//! scores come from the pooled confusion matrix.

use serde::Serialize;

use crate::error::{Error, Result};

/// Row = ground truth, column = prediction. Counts only valid pixels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    /// Row-major `n_classes x n_classes` counts.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn accumulate(&mut self, gt: &[u16], pred: &[u16], valid: &[bool]) -> Result<()> {
        if gt.len() != pred.len() || gt.len() != valid.len() {
            return Err(Error::contract("confusion accumulate length mismatch"));
        }
        for ((&g, &p), &v) in gt.iter().zip(pred).zip(valid) {
            if !v {
                continue;
            }
            let (g, p) = (g as usize, p as usize);
            if g >= self.n_classes || p >= self.n_classes {
                return Err(Error::contract(format!(
                    "label {g}/{p} outside {} classes",
                    self.n_classes
                )));
            }
            self.counts[g * self.n_classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        debug_assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
    }

    pub fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    /// Ground-truth pixel count per class.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n_classes)
            .map(|g| self.counts[g * self.n_classes..(g + 1) * self.n_classes].iter().sum())
            .collect()
    }

    /// Prediction count per class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_classes)
            .map(|p| (0..self.n_classes).map(|g| self.at(g, p)).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.at(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }
}

/// Precision/recall/F1 of one class, with its ground-truth support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Per-class scores from a pooled confusion matrix.
pub fn per_class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    (0..cm.n_classes)
        .map(|c| {
            let tp = cm.at(c, c);
            let (precision, recall, f1) = prf(tp, cols[c] - tp, rows[c] - tp);
            ClassScores { precision, recall, f1, support: rows[c] }
        })
        .collect()
}

/// Macro precision/recall/F1 over the classes present in the ground truth
/// of `cm` (classes absent from both ground truth and prediction never
/// enter the mean).
pub fn macro_scores(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let scores = per_class_scores(cm);
    let present: Vec<&ClassScores> = scores.iter().filter(|s| s.support > 0).collect();
    if present.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = present.len() as f64;
    (
        present.iter().map(|s| s.precision).sum::<f64>() / n,
        present.iter().map(|s| s.recall).sum::<f64>() / n,
        present.iter().map(|s| s.f1).sum::<f64>() / n,
    )
}

/// Full evaluation report for one split at one spectral fraction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Spectral fraction the split was evaluated at.
    pub fraction: f64,
    pub n_classes: usize,
    pub n_samples: usize,
    /// Valid pixels counted over the whole split.
    pub valid_pixels: u64,
    /// Mean of per-sample macro scores (see module docs).
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Overall accuracy from the pooled confusion matrix.
    pub accuracy: f64,
    /// Per-class scores from the pooled confusion matrix.
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    /// Combines per-sample confusion matrices into the split-level report.
    pub fn from_sample_confusions(fraction: f64, per_sample: &[ConfusionMatrix]) -> Result<Self> {
        let first = per_sample
            .first()
            .ok_or_else(|| Error::contract("metrics over an empty sample set"))?;
        let n_classes = first.n_classes;
        let mut pooled = ConfusionMatrix::new(n_classes);
        let mut macro_sums = (0.0, 0.0, 0.0);
        for cm in per_sample {
            pooled.merge(cm);
            let (p, r, f) = macro_scores(cm);
            macro_sums.0 += p;
            macro_sums.1 += r;
            macro_sums.2 += f;
        }
        let n = per_sample.len() as f64;
        Ok(Metrics {
            fraction,
            n_classes,
            n_samples: per_sample.len(),
            valid_pixels: pooled.total(),
            macro_precision: macro_sums.0 / n,
            macro_recall: macro_sums.1 / n,
            macro_f1: macro_sums.2 / n,
            accuracy: pooled.accuracy(),
            per_class: per_class_scores(&pooled),
            confusion: pooled,
        })
    }
}
