//! Evaluation metrics: accuracy, class-wise mean average precision, macro
//! F1, and the cross-modal loss gap.

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub map: f64,
    pub macro_f1: f64,
}

/// One point of the training-time gap trace: G = L^a - L^v between the first
/// two modalities' sustained-boosting losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub iteration: u64,
    pub loss_a: f64,
    pub loss_v: f64,
    pub gap: f64,
}

pub fn gap(loss_a: f64, loss_v: f64) -> f64 {
    loss_a - loss_v
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "accuracy needs equal non-empty label lists, got {}/{}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1. A class absent from both predictions and
/// ground truth scores 1; any other zero denominator scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument("macro_f1 needs equal non-empty label lists".to_string()));
    }
    if pred.iter().chain(truth).any(|&l| l >= num_classes) {
        return Err(Error::InvalidArgument(format!("label out of range 0..{num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let mut sum = 0.0;
    for k in 0..num_classes {
        let f1 = if tp[k] == 0 && fp[k] == 0 && fneg[k] == 0 {
            1.0
        } else {
            let denom = 2 * tp[k] + fp[k] + fneg[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        };
        sum += f1;
    }
    Ok(sum / num_classes as f64)
}

/// Class-wise (macro) mean average precision.
///
/// Per class, samples are ranked by that class's score, descending, ties
/// broken by sample index; AP averages precision at each relevant rank.
/// Classes with no positive sample are skipped.
pub fn mean_average_precision(scores: &Matrix, truth: &[usize]) -> Result<f64> {
    if scores.rows() == 0 || scores.rows() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "MAP needs one score row per label, got {} rows / {} labels",
            scores.rows(),
            truth.len()
        )));
    }
    let k = scores.cols();
    if truth.iter().any(|&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label out of range 0..{k}")));
    }
    let n = scores.rows();
    let mut class_aps = Vec::new();
    for class in 0..k {
        let positives = truth.iter().filter(|&&t| t == class).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores
                .get(b, class)
                .partial_cmp(&scores.get(a, class))
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            if truth[idx] == class {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        class_aps.push(ap / positives as f64);
    }
    if class_aps.is_empty() {
        return Err(Error::InvalidArgument("no positive class anywhere".to_string()));
    }
    Ok(class_aps.iter().sum::<f64>() / class_aps.len() as f64)
}

pub fn report(scores: &Matrix, truth: &[usize], num_classes: usize) -> Result<MetricsReport> {
    let pred = argmax_rows(scores);
    Ok(MetricsReport {
        accuracy: accuracy(&pred, truth)?,
        map: mean_average_precision(scores, truth)?,
        macro_f1: macro_f1(&pred, truth, num_classes)?,
    })
}
