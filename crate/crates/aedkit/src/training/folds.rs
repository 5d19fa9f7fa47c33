//! Fold-rotation protocol: train five times, each run withholding one
//! fold, and average the fold accuracies.

use super::{train, RunHistory, TrainConfig, TrainError};
use crate::archive::WeightArchive;
use crate::augment::AugmentSpec;
use crate::datasets::{Esc50Manifest, LoaderOpts};
use crate::model::{build, ModelConfig, Network, Scalar};
use crate::rng::SeededRng;
use crate::surgery::replace_head;

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: u8,
    /// Final-epoch eval accuracy of this fold's model.
    pub accuracy: f64,
    pub history: RunHistory,
}

#[derive(Debug, Clone)]
pub struct FoldResults {
    pub folds: Vec<FoldOutcome>,
    pub mean_accuracy: f64,
}

const TAG_FOLD: u64 = 20;
const SUB_INIT: u64 = 0;
const SUB_HEAD: u64 = 1;
const SUB_TRAIN: u64 = 2;

/// For each fold 1..=5: build (or adapt) a model, train on the other four
/// folds, and evaluate on the withheld one. When `base_weights` is given,
/// its head is replaced with a fresh one of the right size and every
/// parameter is fine-tuned.
///
/// Folds are fully independent: each derives its own init, head, and data
/// streams from `(seed, fold)`, so per-fold results do not depend on the
/// order folds are run in.
pub fn run_folds<F: Scalar>(
    manifest: &Esc50Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    augment: &AugmentSpec,
    loader: &LoaderOpts,
    base_weights: Option<&WeightArchive>,
    rng: &SeededRng,
) -> Result<FoldResults, TrainError> {
    let present = manifest.folds();
    for fold in 1..=5u8 {
        if !present.contains(&fold) {
            return Err(TrainError::Dataset(
                crate::datasets::DatasetError::MissingFold(fold),
            ));
        }
    }

    let mut folds = Vec::with_capacity(5);
    for fold in 1..=5u8 {
        let (train_split, eval_split) = manifest.folds_split(fold)?;
        let fold_rng = rng.derive(&[TAG_FOLD, fold as u64]);
        let mut net: Network<F> = build(model_cfg, &mut fold_rng.derive(&[SUB_INIT]))?;
        if let Some(base) = base_weights {
            let adapted = replace_head(
                base,
                model_cfg.n_classes,
                &mut fold_rng.derive(&[SUB_HEAD]),
            )?;
            net.load_weights(&adapted)?;
        }
        let outcome = train(
            &mut net,
            &train_split,
            &eval_split,
            train_cfg,
            augment,
            loader,
            &fold_rng.derive(&[SUB_TRAIN]),
        )?;
        folds.push(FoldOutcome {
            fold,
            accuracy: outcome.history.final_metric(),
            history: outcome.history,
        });
    }

    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(FoldResults {
        folds,
        mean_accuracy,
    })
}
