//! Multi-label evaluation: per-class and overall precision/recall/F1 from
//! thresholded predictions, and mean average precision from rankings.
//!
//! Empty denominators count as zero (0/0 -> 0) throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Per-label counts over a set of images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    /// Images where the label was predicted and present.
    pub correct: Vec<usize>,
    /// Images where the label was predicted.
    pub predicted: Vec<usize>,
    /// Images where the label is present.
    pub ground_truth: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub pr: PrecisionRecall,
    /// `None` for labels without a positive example; those are left out of mAP.
    pub per_label_ap: Vec<Option<f64>>,
}

impl MetricsReport {
    /// Column order used by every CSV this crate writes.
    pub const COLUMNS: [&'static str; 7] = ["mAP", "CP", "CR", "CF1", "OP", "OR", "OF1"];

    pub fn values(&self) -> [f64; 7] {
        let p = &self.pr;
        [self.map, p.cp, p.cr, p.cf1, p.op, p.or, p.of1]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn check_truth(scores: &Tensor, truth: &Tensor) -> Result<()> {
    if scores.shape() != truth.shape() {
        return Err(Error::Shape {
            op: "metrics",
            left: scores.shape(),
            right: truth.shape(),
        });
    }
    if let Some(v) = truth.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!(
            "ground truth must be 0/1, found {v}"
        )));
    }
    Ok(())
}

/// Counts predictions on an images x C matrix of logits. A label counts as
/// predicted when `sigmoid(score) >= threshold`.
pub fn count(scores: &Tensor, truth: &Tensor, threshold: f64) -> Result<MetricCounts> {
    check_truth(scores, truth)?;
    let c = scores.cols();
    let mut counts = MetricCounts {
        correct: vec![0; c],
        predicted: vec![0; c],
        ground_truth: vec![0; c],
    };
    for (srow, trow) in scores.row_iter().zip(truth.row_iter()) {
        for j in 0..c {
            let pred = sigmoid(srow[j]) >= threshold;
            let gt = trow[j] == 1.0;
            counts.predicted[j] += pred as usize;
            counts.ground_truth[j] += gt as usize;
            counts.correct[j] += (pred && gt) as usize;
        }
    }
    Ok(counts)
}

pub fn overall_and_perclass(counts: &MetricCounts) -> PrecisionRecall {
    let c = counts.correct.len();
    let (cp, cr) = if c == 0 {
        (0.0, 0.0)
    } else {
        let cp = (0..c)
            .map(|i| ratio(counts.correct[i], counts.predicted[i]))
            .sum::<f64>();
        let cr = (0..c)
            .map(|i| ratio(counts.correct[i], counts.ground_truth[i]))
            .sum::<f64>();
        (cp / c as f64, cr / c as f64)
    };
    let cor: usize = counts.correct.iter().sum();
    let op = ratio(cor, counts.predicted.iter().sum());
    let or = ratio(cor, counts.ground_truth.iter().sum());
    PrecisionRecall {
        cp,
        cr,
        cf1: harmonic(cp, cr),
        op,
        or,
        of1: harmonic(op, or),
    }
}

/// Non-interpolated average precision of one label's ranking. Scores are
/// sorted descending; equal scores keep their original order.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Shape {
            op: "average_precision",
            left: (scores.len(), 1),
            right: (truth.len(), 1),
        });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / positives as f64)
}

/// Mean over the labels that have an AP.
pub fn mean_ap(per_label: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Full report for an images x C logit matrix against 0/1 truth.
pub fn evaluate(scores: &Tensor, truth: &Tensor, threshold: f64) -> Result<MetricsReport> {
    let counts = count(scores, truth, threshold)?;
    let pr = overall_and_perclass(&counts);
    let per_label_ap = (0..scores.cols())
        .map(|j| {
            let col: Vec<f64> = scores.row_iter().map(|r| r[j]).collect();
            let t: Vec<bool> = truth.row_iter().map(|r| r[j] == 1.0).collect();
            match average_precision(&col, &t) {
                Ok(ap) => Ok(Some(ap)),
                Err(Error::NoPositives) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let map = mean_ap(&per_label_ap)?;
    Ok(MetricsReport {
        map,
        pr,
        per_label_ap,
    })
}
