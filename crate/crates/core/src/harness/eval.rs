//! Model evaluation: late fusion over present modalities plus per-modality
//! reports, with optional test-time perturbation.

use serde::Serialize;

use crate::boostloss::{stack_losses, AblationSpec};
use crate::data::{perturb, Dataset, PerturbationSpec};
use crate::diffcore::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::metrics::{report, MetricsReport};
use crate::model::{ensemble_values, EnsembleMode, MultimodalModel};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct ModalityEval {
    pub name: String,
    /// None when no sample has this modality present.
    pub report: Option<MetricsReport>,
    pub present: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub multi: MetricsReport,
    pub per_modality: Vec<ModalityEval>,
}

fn check_compatible(model: &MultimodalModel, dataset: &Dataset) -> Result<()> {
    if dataset.num_classes != model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model {}",
            dataset.num_classes,
            model.num_classes()
        )));
    }
    if dataset.modalities.len() != model.num_modalities() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} modalities, model {}",
            dataset.modalities.len(),
            model.num_modalities()
        )));
    }
    for (meta, m) in dataset.modalities.iter().zip(model.modalities()) {
        if meta.name != m.name() {
            return Err(Error::InvalidArgument(format!(
                "modality order mismatch: dataset {:?} vs model {:?}",
                meta.name,
                m.name()
            )));
        }
    }
    Ok(())
}

/// Mean-of-stack probability rows for every sample of one modality.
fn modality_predictions(
    model: &MultimodalModel,
    dataset: &Dataset,
    modality: usize,
) -> Result<Matrix> {
    let n = dataset.len();
    let k = model.num_classes();
    let mut out = Matrix::zeros(n, k);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = dataset.feature_matrix(modality, chunk);
        let mut tape = Tape::new();
        let fwd = model.forward_modality(&mut tape, modality, x)?;
        let preds: Vec<&Matrix> = fwd.stack.iter().map(|&p| tape.value(p)).collect();
        let mean = ensemble_values(&preds, EnsembleMode::Mean)?;
        for (row, &idx) in chunk.iter().enumerate() {
            for j in 0..k {
                out.set(idx, j, mean.get(row, j));
            }
        }
    }
    Ok(out)
}

/// Evaluate with late fusion: per modality the stack mean, summed over the
/// modalities present for each sample; samples with nothing present fall
/// back to a uniform row. Per-modality reports cover present samples only.
pub fn evaluate(
    model: &MultimodalModel,
    dataset: &Dataset,
    perturbation: Option<&PerturbationSpec>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".to_string()));
    }
    let perturbed;
    let data = match perturbation {
        Some(spec) => {
            perturbed = perturb(dataset, spec)?;
            &perturbed
        }
        None => dataset,
    };
    check_compatible(model, data)?;

    let n = data.len();
    let k = model.num_classes();
    let labels = data.labels();
    let per_mod_preds: Vec<Matrix> = (0..model.num_modalities())
        .map(|m| modality_predictions(model, data, m))
        .collect::<Result<_>>()?;

    let mut fused = Matrix::zeros(n, k);
    for i in 0..n {
        let mut any = false;
        for (m, preds) in per_mod_preds.iter().enumerate() {
            if data.samples[i].present[m] {
                any = true;
                for j in 0..k {
                    fused.set(i, j, fused.get(i, j) + preds.get(i, j));
                }
            }
        }
        if !any {
            for j in 0..k {
                fused.set(i, j, 1.0 / k as f64);
            }
        }
    }
    let multi = report(&fused, &labels, k)?;

    let mut per_modality = Vec::with_capacity(model.num_modalities());
    for (m, preds) in per_mod_preds.iter().enumerate() {
        let present: Vec<usize> =
            (0..n).filter(|&i| data.samples[i].present[m]).collect();
        let rep = if present.is_empty() {
            None
        } else {
            let sub = Matrix::from_fn(present.len(), k, |i, j| preds.get(present[i], j));
            let sub_labels: Vec<usize> = present.iter().map(|&i| labels[i]).collect();
            Some(report(&sub, &sub_labels, k)?)
        };
        per_modality.push(ModalityEval {
            name: model.modality(m).name().to_string(),
            report: rep,
            present: present.len(),
        });
    }
    Ok(EvalReport { multi, per_modality })
}

/// Mean joint loss over a dataset under the training objective (or plain
/// cross entropy when boosting is off). Deterministic chunked evaluation.
pub fn dataset_loss(
    model: &MultimodalModel,
    dataset: &Dataset,
    lambda: f64,
    mode: EnsembleMode,
    ablation: AblationSpec,
    boosting: bool,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty dataset".to_string()));
    }
    check_compatible(model, dataset)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let y = dataset.label_matrix(chunk);
        let mut tape = Tape::new();
        let mut joint = 0.0;
        for m in 0..model.num_modalities() {
            let x = dataset.feature_matrix(m, chunk);
            let fwd = model.forward_modality(&mut tape, m, x)?;
            let total_node = if boosting {
                stack_losses(&mut tape, &fwd.stack, &y, lambda, mode, ablation)?.total
            } else {
                tape.ce_soft(fwd.stack[0], y.clone())?
            };
            joint += tape.scalar(total_node)?;
        }
        total += joint * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Training-set cross entropy of the first `t` classifiers' mean ensemble,
/// used for the full-vs-prior comparison after training.
pub fn prefix_ensemble_ce(
    model: &MultimodalModel,
    dataset: &Dataset,
    modality: usize,
    t: usize,
) -> Result<f64> {
    if t == 0 || t > model.modality(modality).num_classifiers() {
        return Err(Error::InvalidArgument(format!("prefix {t} out of range")));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let y = dataset.label_matrix(chunk);
        let mut tape = Tape::new();
        let fwd = model.forward_modality(&mut tape, modality, dataset.feature_matrix(modality, chunk))?;
        let combined = crate::model::ensemble_prediction(&mut tape, &fwd.stack[..t], EnsembleMode::Mean)?;
        let ce = tape.ce_soft(combined, y)?;
        total += tape.scalar(ce)? * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}
