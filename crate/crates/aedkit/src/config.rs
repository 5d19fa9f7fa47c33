//! JSON experiment configuration.
//!
//! Configs are strict: unknown keys anywhere are rejected before any work
//! starts. Relative paths resolve against the config file's directory.
//! `AEDKIT_SEED` overrides the config seed (environment wins; documented
//! precedence).

use crate::augment::{AugmentError, AugmentSpec, LabelMode};
use crate::audio::{AudioError, FeatureConfig};
use crate::datasets::Strictness;
use crate::model::{ModelConfig, ModelError};
use crate::training::{AblationEntry, LossMode, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn default_eval_fold() -> u8 {
    1
}
fn default_strictness() -> Strictness {
    Strictness::Lax
}
fn default_workers() -> usize {
    1
}

/// Which dataset a run binds to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Folded single-label corpus.
    Esc50 {
        meta_csv: PathBuf,
        audio_dir: PathBuf,
        #[serde(default = "default_strictness")]
        strictness: Strictness,
        /// Withheld fold for single training runs (`train` command).
        #[serde(default = "default_eval_fold")]
        eval_fold: u8,
    },
    /// Multi-label corpus with split tags in the manifest.
    MultiLabel { manifest: PathBuf },
}

impl DatasetConfig {
    pub fn label_mode(&self) -> LabelMode {
        match self {
            DatasetConfig::Esc50 { .. } => LabelMode::SingleLabel,
            DatasetConfig::MultiLabel { .. } => LabelMode::MultiLabel,
        }
    }

    /// Uniform clip length when the config does not override it: 5 s for
    /// folded single-label data, 10 s for multi-label data.
    pub fn default_clip_seconds(&self) -> f64 {
        match self {
            DatasetConfig::Esc50 { .. } => 5.0,
            DatasetConfig::MultiLabel { .. } => 10.0,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            DatasetConfig::Esc50 {
                meta_csv,
                audio_dir,
                ..
            } => {
                *meta_csv = resolve(base, meta_csv);
                *audio_dir = resolve(base, audio_dir);
            }
            DatasetConfig::MultiLabel { manifest } => {
                *manifest = resolve(base, manifest);
            }
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Everything one `train` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Weights to load before training (fine-tuning a donor).
    #[serde(default)]
    pub init_archive: Option<PathBuf>,
    /// Uniform clip length in seconds; defaults per dataset kind.
    #[serde(default)]
    pub clip_seconds: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        config.dataset.resolve_paths(&base);
        config.output_dir = resolve(&base, &config.output_dir);
        if let Some(archive) = &config.init_archive {
            config.init_archive = Some(resolve(&base, archive));
        }
        config.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn clip_seconds(&self) -> f64 {
        self.clip_seconds
            .unwrap_or_else(|| self.dataset.default_clip_seconds())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.features.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let mode = self.dataset.label_mode();
        self.augment.validate(mode)?;
        let mode_ok = matches!(
            (self.train.loss_mode, mode),
            (LossMode::SingleLabelCe, LabelMode::SingleLabel)
                | (LossMode::MultiLabelBce, LabelMode::MultiLabel)
        );
        if !mode_ok {
            return Err(ConfigError::Train(TrainError::ModeMismatch {
                mode: self.train.loss_mode,
                data: mode,
            }));
        }
        if let DatasetConfig::Esc50 { eval_fold, .. } = &self.dataset {
            if !(1..=5).contains(eval_fold) {
                return Err(ConfigError::Train(TrainError::InvalidConfig(format!(
                    "eval_fold {eval_fold} outside 1..=5"
                ))));
            }
        }
        if !(self.clip_seconds() > 0.0) {
            return Err(ConfigError::Train(TrainError::InvalidConfig(
                "clip_seconds must be > 0".to_string(),
            )));
        }
        if self.workers == 0 {
            return Err(ConfigError::Train(TrainError::InvalidConfig(
                "workers must be >= 1".to_string(),
            )));
        }
        Ok(())
    }
}

/// A grid file: the shared dataset plus one entry per ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub clip_seconds: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub entries: Vec<AblationEntry>,
}

impl AblationConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: AblationConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        config.dataset.resolve_paths(&base);
        config.output_dir = resolve(&base, &config.output_dir);
        for entry in &mut config.entries {
            if let Some(donor) = &entry.donor {
                entry.donor = Some(resolve(&base, donor));
            }
        }
        config.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn clip_seconds(&self) -> f64 {
        self.clip_seconds
            .unwrap_or_else(|| self.dataset.default_clip_seconds())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.features.validate()?;
        if !matches!(self.dataset, DatasetConfig::Esc50 { .. }) {
            return Err(ConfigError::Train(TrainError::InvalidConfig(
                "ablation grids run the fold protocol; dataset must be folded".to_string(),
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        for entry in &self.entries {
            if !names.insert(&entry.name) {
                return Err(ConfigError::Train(TrainError::InvalidConfig(format!(
                    "duplicate grid entry name {:?}",
                    entry.name
                ))));
            }
            entry.model.validate()?;
            entry.train.validate()?;
            entry.augment.validate(self.dataset.label_mode())?;
        }
        if self.workers == 0 {
            return Err(ConfigError::Train(TrainError::InvalidConfig(
                "workers must be >= 1".to_string(),
            )));
        }
        Ok(())
    }
}

/// The seed a run actually uses: `AEDKIT_SEED` from the environment when
/// set (and parseable as u64), else the config seed.
pub fn effective_seed(config_seed: u64) -> u64 {
    std::env::var("AEDKIT_SEED")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(config_seed)
}
