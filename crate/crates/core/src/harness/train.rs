//! End-to-end training loop.
//!
//! Per iteration: sample a mini-batch, run every modality's encoder and
//! classifier stack, build the sustained-boosting losses, take one SGD step,
//! and accumulate confidence statistics. Every `t_N` iterations the
//! adaptive assignment check runs and may append a classifier to the
//! lowest-confidence modality. Runs are bit-reproducible from config + seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aca::{maybe_check, AcaAction, ConfidenceAccumulator};
use crate::boostloss::{joint_loss, stack_losses, LossBreakdown, LossNodes};
use crate::checkpoint::write_params;
use crate::data::{gen_synthetic, load_features, split, Dataset, SyntheticSpec};
use crate::diffcore::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetConfig, ExperimentConfig, SeedPlan};
use crate::harness::eval::{dataset_loss, evaluate};
use crate::harness::runlog::{AcaEvent, ConfidenceSample, EvalCheckpoint, IterationRecord, RunLog};
use crate::metrics::{gap, GapPoint};
use crate::model::MultimodalModel;
use crate::optim::SgdOptimizer;

#[derive(Debug, Clone)]
pub struct SplitSet {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: MultimodalModel,
    pub log: RunLog,
    pub splits: SplitSet,
}

pub fn build_dataset(cfg: &ExperimentConfig, data_seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetConfig::Synthetic { n, k, modalities } => gen_synthetic(&SyntheticSpec {
            n: *n,
            k: *k,
            modalities: modalities.clone(),
            seed: data_seed,
        }),
        DatasetConfig::File { path } => load_features(path),
    }
}

pub fn build_splits(cfg: &ExperimentConfig, seeds: &SeedPlan) -> Result<SplitSet> {
    let full = build_dataset(cfg, seeds.data)?;
    let (train, val, test) = split(&full, cfg.split.train_frac, cfg.split.val_frac, seeds.split)?;
    Ok(SplitSet { train, val, test })
}

/// Execute the learning algorithm and return the model with its full log.
///
/// Aborts with a numeric error on a non-finite loss, first writing the last
/// evaluated parameters to `<output_dir>/last_good.ckpt` when an output
/// directory is configured.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let seeds = SeedPlan::new(seed);

    let splits = build_splits(cfg, &seeds)?;
    if splits.train.is_empty() {
        return Err(Error::Config("empty training split".to_string()));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let specs = cfg.encoder_specs(&splits.train.modalities);
    let mut model = MultimodalModel::new(
        &specs,
        splits.train.num_classes,
        cfg.model.classifier_hidden,
        &mut init_rng,
    )?;

    let mut optimizer = SgdOptimizer::new(cfg.optim);
    let mut loop_rng = ChaCha8Rng::seed_from_u64(seeds.train_loop);

    let num_modalities = model.num_modalities();
    let batches_per_epoch = splits.train.len().div_ceil(cfg.batch_size);
    let aca_cfg = cfg.aca.to_aca_config(batches_per_epoch);
    let aca_active = cfg.aca.enabled && cfg.boosting && num_modalities >= 2;
    let mut accumulator = ConfidenceAccumulator::new(num_modalities);

    let mut log = RunLog::new(model.modalities().iter().map(|m| m.name().to_string()).collect());
    let mut last_good = Vec::new();
    write_params(model.store(), &mut last_good)?;

    let mut iter: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        order.shuffle(&mut loop_rng);
        for chunk in order.chunks(cfg.batch_size) {
            iter += 1;
            let y = splits.train.label_matrix(chunk);

            let mut tape = Tape::new();
            let mut forwards = Vec::with_capacity(num_modalities);
            let mut totals = Vec::with_capacity(num_modalities);
            let mut breakdowns: Vec<LossBreakdown> = Vec::with_capacity(num_modalities);
            for m in 0..num_modalities {
                let x = splits.train.feature_matrix(m, chunk);
                let fwd = model.forward_modality(&mut tape, m, x)?;
                let nodes = if cfg.boosting {
                    stack_losses(
                        &mut tape,
                        &fwd.stack,
                        &y,
                        cfg.lambda,
                        cfg.ensemble_mode,
                        cfg.ablation,
                    )?
                } else {
                    let ce = tape.ce_soft(fwd.stack[0], y.clone())?;
                    LossNodes { eps: Some(ce), eps_all: None, eps_pre: None, total: ce }
                };
                breakdowns.push(nodes.breakdown(&tape)?);
                totals.push(nodes.total);
                forwards.push(fwd);
            }
            let joint = joint_loss(&mut tape, &totals)?;
            let joint_value = tape.scalar(joint)?;
            if !joint_value.is_finite() {
                if let Some(dir) = &cfg.output_dir {
                    std::fs::create_dir_all(dir)?;
                    crate::checkpoint::save_params(
                        &crate::checkpoint::read_params(last_good.as_slice())?,
                        &dir.join("last_good.ckpt"),
                    )?;
                }
                return Err(Error::Numeric(format!(
                    "non-finite loss at iteration {iter}; last good checkpoint saved"
                )));
            }

            tape.backward(joint, model.store_mut())?;
            optimizer.step(model.store_mut())?;

            if num_modalities >= 2 {
                log.gap_trace.push(GapPoint {
                    iteration: iter,
                    loss_a: breakdowns[0].total,
                    loss_v: breakdowns[1].total,
                    gap: gap(breakdowns[0].total, breakdowns[1].total),
                });
            }
            log.iterations.push(IterationRecord {
                iter,
                epoch,
                losses: breakdowns,
                joint: joint_value,
            });

            if aca_active {
                // predictions of this batch, before the parameter update
                let stacks: Vec<Vec<&Matrix>> = forwards
                    .iter()
                    .map(|f| f.stack.iter().map(|&p| tape.value(p)).collect())
                    .collect();
                accumulator.accumulate(&stacks, &y)?;
                drop(stacks);

                let counts: Vec<usize> =
                    model.modalities().iter().map(|m| m.num_classifiers()).collect();
                if let Some(decision) = maybe_check(iter, &aca_cfg, &counts, &mut accumulator)? {
                    if let AcaAction::Add(target) = decision.action {
                        model.add_classifier(target, &mut loop_rng, aca_cfg.max_classifiers)?;
                    }
                    log.confidence.push(ConfidenceSample {
                        iter,
                        scores: decision.record.scores.clone(),
                    });
                    log.aca_events.push(AcaEvent {
                        iter,
                        scores: decision.record.scores,
                        action: decision.action.describe(&log.modalities),
                    });
                }
            }
        }

        if epoch % cfg.eval_every_epochs == 0 && !splits.val.is_empty() {
            let val_loss = dataset_loss(
                &model,
                &splits.val,
                cfg.lambda,
                cfg.ensemble_mode,
                cfg.ablation,
                cfg.boosting,
                cfg.batch_size,
            )?;
            optimizer.observe_val_loss(val_loss);
            let val = evaluate(&model, &splits.val, None)?;
            log.checkpoints.push(EvalCheckpoint {
                epoch,
                iter,
                val_loss,
                lr: optimizer.current_lr(),
                val,
            });
            last_good.clear();
            write_params(model.store(), &mut last_good)?;
        }
    }

    log.final_counts = model.modalities().iter().map(|m| m.num_classifiers()).collect();
    if !splits.train.is_empty() {
        log.final_train = Some(evaluate(&model, &splits.train, None)?);
    }
    if !splits.val.is_empty() {
        log.final_val = Some(evaluate(&model, &splits.val, None)?);
    }
    if !splits.test.is_empty() {
        log.final_test = Some(evaluate(&model, &splits.test, None)?);
    }

    Ok(TrainOutput { model, log, splits })
}
