//! Optimizer, losses, schedule, early stopping, metrics, and the
//! fold-rotation / ablation harness.
//!
//! Training follows one recipe: adam with an exponentially decaying
//! learning rate (`initial_lr * decay^epoch`), cross entropy for
//! single-label data or class-weighted binary cross entropy for
//! multi-label data. Fine-tuning runs a fixed number of epochs and
//! evaluates the final model; pretraining adds early stopping (no new
//! minimum eval loss for `patience` epochs AND the learning rate below
//! `lr_floor`) and selects the epoch with the lowest eval loss.

mod ablate;
mod adam;
mod folds;
mod loss;
mod metrics;

pub use ablate::{ablate, AblationEntry, AblationGrid, AblationRow, AblationTable};
pub use adam::Adam;
pub use folds::{run_folds, FoldOutcome, FoldResults};
pub use loss::{
    class_weights, cross_entropy, cross_entropy_batch, weighted_bce, weighted_bce_batch,
};
pub use metrics::{accuracy, average_precision, mean_average_precision};

use crate::archive::{ArchiveError, WeightArchive};
use crate::augment::{AugmentSpec, LabelMode};
use crate::datasets::{
    batch_iter, eval_batches, BatchTargets, DataSplit, DatasetError, LoaderOpts,
};
use crate::model::{ModelError, Network, Scalar, Tape};
use crate::rng::SeededRng;
use crate::surgery::SurgeryError;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("class {0} has zero examples; weights undefined")]
    ClassWithZeroExamples(usize),
    #[error("class index {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("{what}: got {got}, want {want}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no class has a positive label; mAP undefined")]
    NoPositiveLabels,
    #[error("loss mode {mode:?} does not match dataset label mode {data:?}")]
    ModeMismatch { mode: LossMode, data: LabelMode },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Surgery(#[from] SurgeryError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The loss the training loop optimizes. Explicit, never inferred from the
/// data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    SingleLabelCe,
    MultiLabelBce,
}

/// Class-weighting policy for the multi-label criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    InverseFrequency,
    Explicit(Vec<f32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub lr_floor: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            lr_floor: 1e-6,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub class_weights: Option<ClassWeights>,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` runs all `epochs`; `Some` enables pretraining-style early
    /// stopping.
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            lr_decay_per_epoch: 0.8,
            epochs: 25,
            loss_mode: LossMode::SingleLabelCe,
            class_weights: None,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be > 0".into());
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch < 1.0) {
            return bad(format!(
                "lr_decay_per_epoch {} outside (0, 1)",
                self.lr_decay_per_epoch
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0".into());
        }
        if self.class_weights.is_some() && self.loss_mode != LossMode::MultiLabelBce {
            return bad("class_weights require multi_label_bce".into());
        }
        if let Some(es) = &self.early_stop {
            if !(es.lr_floor > 0.0) || es.patience == 0 {
                return bad("early_stop needs lr_floor > 0 and patience >= 1".into());
            }
        }
        Ok(())
    }
}

/// Learning rate at an epoch: `initial_lr * decay^epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * cfg.lr_decay_per_epoch.powi(epoch as i32)
}

/// One epoch's record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    /// Accuracy (single-label) or mAP (multi-label).
    pub eval_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub epochs: Vec<EpochStats>,
    /// Index of the minimum eval loss (first on ties).
    pub selected_epoch: usize,
}

impl RunHistory {
    pub fn final_metric(&self) -> f64 {
        self.epochs.last().map(|e| e.eval_metric).unwrap_or(0.0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,lr,train_loss,eval_loss,eval_metric")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.12e},{:.8},{:.8},{:.8}",
                e.epoch, e.lr, e.train_loss, e.eval_loss, e.eval_metric
            )?;
        }
        out.flush()
    }
}

/// A finished run: the history plus the final and best (lowest eval loss)
/// weights.
pub struct TrainOutcome {
    pub history: RunHistory,
    pub best: WeightArchive,
    pub final_weights: WeightArchive,
}

struct Criterion {
    mode: LossMode,
    weights: Vec<f32>,
}

impl Criterion {
    fn batch_loss<F: Scalar>(
        &self,
        logits: &Array2<F>,
        targets: &BatchTargets,
    ) -> Result<(f64, Array2<F>), TrainError> {
        match (self.mode, targets) {
            (LossMode::SingleLabelCe, BatchTargets::Classes(classes)) => {
                cross_entropy_batch(logits, classes)
            }
            (LossMode::MultiLabelBce, BatchTargets::MultiHot(t)) => {
                weighted_bce_batch(logits, t, &self.weights)
            }
            (mode, BatchTargets::Classes(_)) => Err(TrainError::ModeMismatch {
                mode,
                data: LabelMode::SingleLabel,
            }),
            (mode, BatchTargets::MultiHot(_)) => Err(TrainError::ModeMismatch {
                mode,
                data: LabelMode::MultiLabel,
            }),
        }
    }
}

fn resolve_weights(cfg: &TrainConfig, train_split: &DataSplit) -> Result<Vec<f32>, TrainError> {
    match &cfg.class_weights {
        None => Ok(vec![1.0; train_split.n_classes]),
        Some(ClassWeights::InverseFrequency) => class_weights(&train_split.label_counts()),
        Some(ClassWeights::Explicit(w)) => {
            if w.len() != train_split.n_classes {
                return Err(TrainError::LengthMismatch {
                    what: "explicit class weights",
                    got: w.len(),
                    want: train_split.n_classes,
                });
            }
            Ok(w.clone())
        }
    }
}

/// Evaluate a network over a split: (mean loss, metric).
fn evaluate<F: Scalar>(
    net: &Network<F>,
    split: &DataSplit,
    criterion: &Criterion,
    loader: &LoaderOpts,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let batches = eval_batches::<F>(split, loader, batch_size)?;
    let mut total_loss = 0.0;
    let mut total_examples = 0usize;
    let mut all_logits: Vec<Array2<f64>> = Vec::new();
    let mut all_classes: Vec<usize> = Vec::new();
    let mut all_targets: Vec<Array2<f32>> = Vec::new();
    for batch in &batches {
        let logits = net.infer(&batch.features)?;
        let b = batch.features.dim().0;
        let (loss, _) = criterion.batch_loss(&logits, &batch.targets)?;
        total_loss += loss * b as f64;
        total_examples += b;
        all_logits.push(logits.mapv(|v| v.cast_to_f64()));
        match &batch.targets {
            BatchTargets::Classes(c) => all_classes.extend_from_slice(c),
            BatchTargets::MultiHot(m) => all_targets.push(m.clone()),
        }
    }
    if total_examples == 0 {
        return Err(TrainError::EmptyEvalSet);
    }
    let eval_loss = total_loss / total_examples as f64;

    let stacked = ndarray::concatenate(
        ndarray::Axis(0),
        &all_logits.iter().map(|a| a.view()).collect::<Vec<_>>(),
    )
    .expect("eval batches share logit width");
    let metric = match criterion.mode {
        LossMode::SingleLabelCe => accuracy(&stacked, &all_classes)?,
        LossMode::MultiLabelBce => {
            let targets = ndarray::concatenate(
                ndarray::Axis(0),
                &all_targets.iter().map(|a| a.view()).collect::<Vec<_>>(),
            )
            .expect("eval batches share target width");
            mean_average_precision(&stacked, &targets)?
        }
    };
    Ok((eval_loss, metric))
}

const TAG_DATA: u64 = 10;

/// Train `net` on `train_split`, evaluating on `eval_split` each epoch.
///
/// Deterministic given the seed: data order, augmentation, and updates are
/// all derived from it. Fails fast on a non-finite loss.
pub fn train<F: Scalar>(
    net: &mut Network<F>,
    train_split: &DataSplit,
    eval_split: &DataSplit,
    cfg: &TrainConfig,
    augment: &AugmentSpec,
    loader: &LoaderOpts,
    rng: &SeededRng,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let data_mode = train_split.mode;
    match (cfg.loss_mode, data_mode) {
        (LossMode::SingleLabelCe, LabelMode::SingleLabel)
        | (LossMode::MultiLabelBce, LabelMode::MultiLabel) => {}
        (mode, data) => return Err(TrainError::ModeMismatch { mode, data }),
    }
    let criterion = Criterion {
        mode: cfg.loss_mode,
        weights: resolve_weights(cfg, train_split)?,
    };
    let data_rng = rng.derive(&[TAG_DATA]);
    let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.epsilon);

    let mut history = RunHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut best = net.save_weights("train: initial");

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let batches =
            batch_iter::<F>(train_split, augment, loader, cfg.batch_size, epoch, &data_rng)?;
        let mut train_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let logits = net.forward_train(&batch.features, &mut tape)?;
            let (loss, dlogits) = criterion.batch_loss(&logits, &batch.targets)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            let grads = net.backward(&dlogits, &mut tape);
            adam.step(net, &grads, lr);
            let b = batch.features.dim().0;
            train_loss += loss * b as f64;
            seen += b;
        }
        train_loss /= seen.max(1) as f64;
        // Refresh batch-norm running statistics under the frozen
        // post-update weights so evaluation sees calibrated normalizers.
        net.refresh_running_stats(batches.iter().map(|b| &b.features))?;

        let (eval_loss, eval_metric) =
            evaluate(net, eval_split, &criterion, loader, cfg.batch_size)?;
        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            eval_loss,
            eval_metric,
        });

        if eval_loss < best_loss {
            best_loss = eval_loss;
            history.selected_epoch = epoch;
            best = net.save_weights(&format!("train: epoch {epoch} (best eval loss)"));
        }

        if let Some(es) = &cfg.early_stop {
            let stagnated = epoch.saturating_sub(history.selected_epoch) >= es.patience;
            if stagnated && lr < es.lr_floor {
                break;
            }
        }
    }

    let final_weights = net.save_weights("train: final epoch");
    Ok(TrainOutcome {
        history,
        best,
        final_weights,
    })
}

#[cfg(test)]
mod tests;
