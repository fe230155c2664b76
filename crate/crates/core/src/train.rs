//! Training loop and evaluation.
//!
//! The protocol: a fixed number of epochs (six by default), seeded
//! shuffling, one optimizer step per batch on the averaged dual-head loss,
//! and an evaluation pass with dropout disabled after every epoch. Given
//! the same config, data, and seed, two runs produce bit-identical epoch
//! reports.

use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, LabeledExample};
use crate::heads::{DualHeadModel, ModelError};
use crate::metrics::{accuracy, argmax, macro_f1, MetricsError};
use crate::numerics::RngState;
use crate::optim::{clip_global_norm, AdamW, OptimError, OptimizerState};
use crate::tokenizer::Vocab;

/// Rng stream ids: 0 is reserved for parameter init by model builders.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for head {head} with {classes} classes")]
    LabelRange {
        head: usize,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimization hyperparameters and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub residual: bool,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 42,
            residual: false,
            grad_clip: None,
        }
    }
}

/// Post-epoch snapshot: training loss plus validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy_1: f64,
    pub accuracy_2: f64,
    pub overall_accuracy: f64,
    pub macro_f1_1: f64,
    pub macro_f1_2: f64,
}

/// Evaluation metrics over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy_1: f64,
    pub accuracy_2: f64,
    /// Mean of the two head accuracies.
    pub overall_accuracy: f64,
    pub macro_f1_1: f64,
    pub macro_f1_2: f64,
    /// Mean of the two head macro F1 scores, the single task-level number.
    pub task_macro_f1: f64,
}

/// Everything a finished run produces.
pub struct TrainRun {
    pub reports: Vec<EpochReport>,
    /// Parameters of the epoch with the lowest validation loss, when
    /// snapshotting was requested.
    pub best_model: Option<DualHeadModel>,
}

fn check_labels(model: &DualHeadModel, examples: &[LabeledExample]) -> Result<(), TrainError> {
    let (c1, c2) = (
        model.head_cfg_1.num_classes,
        model.head_cfg_2.num_classes,
    );
    for ex in examples {
        if ex.label_1 >= c1 {
            return Err(TrainError::LabelRange {
                head: 1,
                label: ex.label_1,
                classes: c1,
            });
        }
        if ex.label_2 >= c2 {
            return Err(TrainError::LabelRange {
                head: 2,
                label: ex.label_2,
                classes: c2,
            });
        }
    }
    Ok(())
}

fn batch_views<'a>(
    examples: &'a [LabeledExample],
    batch: &[usize],
) -> (Vec<&'a str>, Vec<usize>, Vec<usize>) {
    let mut texts = Vec::with_capacity(batch.len());
    let mut l1 = Vec::with_capacity(batch.len());
    let mut l2 = Vec::with_capacity(batch.len());
    for &i in batch {
        texts.push(examples[i].text.as_str());
        l1.push(examples[i].label_1);
        l2.push(examples[i].label_2);
    }
    (texts, l1, l2)
}

/// Evaluates with dropout disabled: exact loss over the dataset, per-head
/// accuracy and macro F1, and their head means. Never mutates the model.
pub fn evaluate(
    model: &DualHeadModel,
    vocab: &Vocab,
    examples: &[LabeledExample],
    batch_size: usize,
    max_len: usize,
) -> Result<EvalMetrics, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_labels(model, examples)?;
    let mut rng = RngState::new(0); // eval path never draws from it
    let mut loss_sum = 0.0;
    let mut preds_1 = Vec::with_capacity(examples.len());
    let mut preds_2 = Vec::with_capacity(examples.len());
    let mut labels_1 = Vec::with_capacity(examples.len());
    let mut labels_2 = Vec::with_capacity(examples.len());
    for batch in batch_indices(examples.len(), batch_size, None) {
        let (texts, l1, l2) = batch_views(examples, &batch);
        let encoded = vocab.encode(&texts, max_len);
        let out = model.dual_forward(&encoded, Some(&l1), Some(&l2), false, &mut rng)?;
        loss_sum += out.combined_loss.expect("labels were provided") * batch.len() as f64;
        let c1 = model.head_cfg_1.num_classes;
        let c2 = model.head_cfg_2.num_classes;
        for r in 0..batch.len() {
            preds_1.push(argmax(&out.logits_1.data()[r * c1..(r + 1) * c1]));
            preds_2.push(argmax(&out.logits_2.data()[r * c2..(r + 1) * c2]));
        }
        labels_1.extend(l1);
        labels_2.extend(l2);
    }
    let accuracy_1 = accuracy(&preds_1, &labels_1)?;
    let accuracy_2 = accuracy(&preds_2, &labels_2)?;
    let macro_f1_1 = macro_f1(&preds_1, &labels_1, model.head_cfg_1.num_classes)?;
    let macro_f1_2 = macro_f1(&preds_2, &labels_2, model.head_cfg_2.num_classes)?;
    Ok(EvalMetrics {
        loss: loss_sum / examples.len() as f64,
        accuracy_1,
        accuracy_2,
        overall_accuracy: (accuracy_1 + accuracy_2) / 2.0,
        macro_f1_1,
        macro_f1_2,
        task_macro_f1: (macro_f1_1 + macro_f1_2) / 2.0,
    })
}

/// Runs `cfg.epochs` epochs of seeded-shuffle minibatch training with
/// post-epoch validation, invoking `on_epoch` as each report is produced.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut DualHeadModel,
    vocab: &Vocab,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    cfg: &TrainConfig,
    max_len: usize,
    track_best: bool,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainRun, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_labels(model, train_set)?;
    check_labels(model, val_set)?;

    let optimizer = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut opt_state = OptimizerState::new();
    let mut shuffle_rng = RngState::stream(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = RngState::stream(cfg.seed, STREAM_DROPOUT);

    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, DualHeadModel)> = None;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in batch_indices(train_set.len(), cfg.batch_size, Some(&mut shuffle_rng)) {
            let (texts, l1, l2) = batch_views(train_set, &batch);
            let encoded = vocab.encode(&texts, max_len);
            let mut pass =
                model.forward(&encoded, Some((&l1, &l2)), true, &mut dropout_rng)?;
            let combined = pass.combined_loss.expect("labels were provided");
            loss_sum += pass.tape.scalar_value(combined) * batch.len() as f64;
            model.apply_backward(&mut pass)?;
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(model, max_norm);
            }
            optimizer.step(model, &mut opt_state)?;
        }
        let val = evaluate(model, vocab, val_set, cfg.batch_size, max_len)?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.loss,
            accuracy_1: val.accuracy_1,
            accuracy_2: val.accuracy_2,
            overall_accuracy: val.overall_accuracy,
            macro_f1_1: val.macro_f1_1,
            macro_f1_2: val.macro_f1_2,
        };
        on_epoch(&report);
        reports.push(report);
        if track_best && best.as_ref().is_none_or(|(loss, _)| val.loss < *loss) {
            best = Some((val.loss, model.clone()));
        }
    }
    Ok(TrainRun {
        reports,
        best_model: best.map(|(_, m)| m),
    })
}
