//! Sustained-boosting objective.
//!
//! For a stack of t classifiers the per-batch losses are
//!   residual:  ce(p_t, y - lambda * sum_{j<t} y .* p_j)
//!   ensemble:  ce(combine(p_1..p_t), y)
//!   prior:     ce(combine(p_1..p_{t-1}), y), defined as 0 for t = 1
//! and the modality total is their sum. Residual targets are data, not
//! differentiable nodes: the newest classifier fits what the frozen prior
//! predictions left unexplained, while the ensemble terms keep every
//! classifier and the shared encoder training.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{ensemble_prediction, EnsembleMode};

/// Soft target for the newest classifier. Entries are clamped at zero and
/// never exceed the one-hot label.
#[derive(Debug, Clone)]
pub struct ResidualLabel {
    pub values: Matrix,
    pub lambda: f64,
}

/// Term on/off switches mirroring the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub eps: bool,
    pub eps_all: bool,
    pub eps_pre: bool,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec { eps: true, eps_all: true, eps_pre: true }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.eps && !self.eps_all && !self.eps_pre {
            return Err(Error::Config("ablation disables every loss term".to_string()));
        }
        Ok(())
    }
}

/// Scalar loss values for one modality on one batch. Disabled terms read 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub eps: f64,
    pub eps_all: f64,
    pub eps_pre: f64,
    pub total: f64,
}

/// Tape handles for one modality's loss terms; `total` is differentiable.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub eps: Option<NodeId>,
    pub eps_all: Option<NodeId>,
    pub eps_pre: Option<NodeId>,
    pub total: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, tape: &Tape) -> Result<LossBreakdown> {
        let read = |n: Option<NodeId>| -> Result<f64> {
            n.map_or(Ok(0.0), |id| tape.scalar(id))
        };
        Ok(LossBreakdown {
            eps: read(self.eps)?,
            eps_all: read(self.eps_all)?,
            eps_pre: read(self.eps_pre)?,
            total: tape.scalar(self.total)?,
        })
    }
}

fn check_one_hot(y: &Matrix) -> Result<()> {
    for i in 0..y.rows() {
        let mut ones = 0;
        for &v in y.row(i) {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
            }
        }
        if ones != 1 {
            return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// y_hat = y - lambda * sum_j (y .* p_j), clamped at zero from below.
///
/// `prior_preds` are the predictions of the first t-1 classifiers; an empty
/// slice (t = 1) returns the labels unchanged.
pub fn residual_labels(y: &Matrix, prior_preds: &[&Matrix], lambda: f64) -> Result<ResidualLabel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0,1], got {lambda}")));
    }
    check_one_hot(y)?;
    let mut values = y.clone();
    for p in prior_preds {
        if !p.same_shape(y) {
            return Err(Error::shape(
                "residual_labels",
                format!("prediction {} vs labels {}", p.shape_str(), y.shape_str()),
            ));
        }
        for idx in 0..values.len() {
            // y masks non-ground-truth entries, so only the hot column moves
            values.values_mut()[idx] -= lambda * y.values()[idx] * p.values()[idx];
        }
    }
    for v in values.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(ResidualLabel { values, lambda })
}

/// Build the three loss terms for one modality's stack at t = stack.len().
pub fn stack_losses(
    tape: &mut Tape,
    stack: &[NodeId],
    y: &Matrix,
    lambda: f64,
    mode: EnsembleMode,
    ablation: AblationSpec,
) -> Result<LossNodes> {
    ablation.validate()?;
    if stack.is_empty() {
        return Err(Error::InvalidArgument("empty classifier stack".to_string()));
    }
    let t = stack.len();

    let eps = if ablation.eps {
        let priors: Vec<Matrix> = stack[..t - 1].iter().map(|&p| tape.value(p).clone()).collect();
        let prior_refs: Vec<&Matrix> = priors.iter().collect();
        let target = residual_labels(y, &prior_refs, lambda)?;
        Some(tape.ce_soft(stack[t - 1], target.values)?)
    } else {
        None
    };

    let eps_all = if ablation.eps_all {
        let combined = ensemble_prediction(tape, stack, mode)?;
        Some(tape.ce_soft(combined, y.clone())?)
    } else {
        None
    };

    let eps_pre = if ablation.eps_pre && t > 1 {
        let combined = ensemble_prediction(tape, &stack[..t - 1], mode)?;
        Some(tape.ce_soft(combined, y.clone())?)
    } else {
        None
    };

    let mut total: Option<NodeId> = None;
    for node in [eps, eps_all, eps_pre].into_iter().flatten() {
        total = Some(match total {
            Some(acc) => tape.add(acc, node)?,
            None => node,
        });
    }
    let total = total.ok_or_else(|| {
        // only reachable when eps_pre alone is enabled and t == 1
        Error::InvalidArgument("no active loss term for a single-classifier stack".to_string())
    })?;

    Ok(LossNodes { eps, eps_all, eps_pre, total })
}

/// Joint training loss: unweighted sum of the per-modality totals.
pub fn joint_loss(tape: &mut Tape, totals: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = totals
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no modality losses".to_string()))?;
    let mut acc = first;
    for &n in rest {
        acc = tape.add(acc, n)?;
    }
    Ok(acc)
}
