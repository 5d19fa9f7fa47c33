//! Ablation-grid runner: one fold-rotation experiment per named
//! configuration, with a results table and per-epoch curves on disk.

use super::{run_folds, FoldResults, TrainConfig, TrainError};
use crate::archive::WeightArchive;
use crate::augment::AugmentSpec;
use crate::datasets::{Esc50Manifest, LoaderOpts};
use crate::model::{ModelConfig, Scalar};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// One grid row: a named combination of initialization, augmentation,
/// model, and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationEntry {
    pub name: String,
    /// Donor archive to fine-tune from; `None` trains from scratch.
    #[serde(default)]
    pub donor: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub entries: Vec<AblationEntry>,
}

impl AblationGrid {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut names = std::collections::BTreeSet::new();
        for entry in &self.entries {
            if !names.insert(&entry.name) {
                return Err(TrainError::InvalidConfig(format!(
                    "duplicate grid entry name {:?}",
                    entry.name
                )));
            }
        }
        Ok(())
    }
}

/// One finished (or failed) grid row.
#[derive(Debug)]
pub struct AblationRow {
    pub name: String,
    /// Donor archive file stem, or `-` for scratch.
    pub pretrain: String,
    /// `yes` when any augmentation probability is nonzero, else `-`.
    pub augment: String,
    pub result: Result<FoldResults, String>,
}

#[derive(Debug, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn results_csv(&self) -> String {
        let mut out = String::from(
            "name,pretrain,augment,fold_1,fold_2,fold_3,fold_4,fold_5,mean_acc,status\n",
        );
        for row in &self.rows {
            match &row.result {
                Ok(res) => {
                    let folds: Vec<String> = res
                        .folds
                        .iter()
                        .map(|f| format!("{:.6}", f.accuracy))
                        .collect();
                    out.push_str(&format!(
                        "{},{},{},{},{:.6},ok\n",
                        row.name,
                        row.pretrain,
                        row.augment,
                        folds.join(","),
                        res.mean_accuracy
                    ));
                }
                Err(e) => {
                    out.push_str(&format!(
                        "{},{},{},,,,,,,error: {}\n",
                        row.name,
                        row.pretrain,
                        row.augment,
                        e.replace(',', ";").replace('\n', " ")
                    ));
                }
            }
        }
        out
    }

    /// Fold-averaged per-epoch accuracy/loss curves for successful rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("name,epoch,mean_eval_accuracy,mean_eval_loss\n");
        for row in &self.rows {
            let Ok(res) = &row.result else { continue };
            let max_epochs = res
                .folds
                .iter()
                .map(|f| f.history.epochs.len())
                .max()
                .unwrap_or(0);
            for epoch in 0..max_epochs {
                let at: Vec<&super::EpochStats> = res
                    .folds
                    .iter()
                    .filter_map(|f| f.history.epochs.get(epoch))
                    .collect();
                if at.is_empty() {
                    continue;
                }
                let acc = at.iter().map(|e| e.eval_metric).sum::<f64>() / at.len() as f64;
                let loss = at.iter().map(|e| e.eval_loss).sum::<f64>() / at.len() as f64;
                out.push_str(&format!("{},{epoch},{acc:.6},{loss:.6}\n", row.name));
            }
        }
        out
    }
}

const TAG_ENTRY: u64 = 30;

/// Run every grid entry through the fold-rotation protocol. A failed entry
/// is recorded with its error and the grid continues. Writes
/// `results.csv` and `curves.csv` under `out_dir`.
pub fn ablate<F: Scalar>(
    grid: &AblationGrid,
    manifest: &Esc50Manifest,
    loader: &LoaderOpts,
    rng: &SeededRng,
    out_dir: &Path,
) -> Result<AblationTable, TrainError> {
    grid.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut table = AblationTable::default();
    for (index, entry) in grid.entries.iter().enumerate() {
        let pretrain = entry
            .donor
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "-".to_string());
        let augment = if entry.augment.is_disabled() { "-" } else { "yes" };
        let entry_rng = rng.derive(&[TAG_ENTRY, index as u64]);

        let result = run_entry::<F>(entry, manifest, loader, &entry_rng);
        table.rows.push(AblationRow {
            name: entry.name.clone(),
            pretrain,
            augment: augment.to_string(),
            result: result.map_err(|e| e.to_string()),
        });
    }

    let mut results = std::fs::File::create(out_dir.join("results.csv"))?;
    results.write_all(table.results_csv().as_bytes())?;
    let mut curves = std::fs::File::create(out_dir.join("curves.csv"))?;
    curves.write_all(table.curves_csv().as_bytes())?;
    Ok(table)
}

fn run_entry<F: Scalar>(
    entry: &AblationEntry,
    manifest: &Esc50Manifest,
    loader: &LoaderOpts,
    rng: &SeededRng,
) -> Result<FoldResults, TrainError> {
    let donor = match &entry.donor {
        Some(path) => Some(WeightArchive::read(path)?),
        None => None,
    };
    run_folds::<F>(
        manifest,
        &entry.model,
        &entry.train,
        &entry.augment,
        loader,
        donor.as_ref(),
        rng,
    )
}
