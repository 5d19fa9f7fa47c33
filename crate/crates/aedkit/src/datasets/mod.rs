//! Manifest ingestion and deterministic batch assembly.
//!
//! Two manifest shapes are understood: folded single-label CSV
//! (`filename,fold,target`, extra columns tolerated, folds 1-5) and a
//! neutral multi-label CSV (`n_classes,K` on the first line, then
//! `path,labels,split` rows with semicolon-joined label indices). The
//! [`toy`] submodule synthesizes a sine-mixture corpus in either shape for
//! desk-scale runs.
//!
//! [`batch_iter`] shuffles per epoch from `(seed, epoch)`, augments each
//! example with a stream derived from `(seed, epoch, example_index)`, and
//! assembles batches in shuffle order. Worker parallelism only maps the
//! per-example work; results are identical for any worker count.

pub mod toy;

use crate::audio::{load_wav, AudioError, FeatureConfig};
use crate::augment::{
    AugmentError, AugmentPipeline, AugmentSpec, LabelMode, LabelVector, LabeledExample, Payload,
};
use crate::model::Scalar;
use crate::rng::SeededRng;
use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    ManifestUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {detail}")]
    MalformedManifest { path: PathBuf, detail: String },
    #[error("duplicate path {0} in manifest")]
    DuplicatePath(PathBuf),
    #[error("fold {0} outside 1..=5")]
    BadFold(u8),
    #[error("strict validation: {0}")]
    StrictViolation(String),
    #[error("manifest is missing fold {0}")]
    MissingFold(u8),
    #[error("class index {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("example {path} has an empty label set")]
    EmptyLabelSet { path: PathBuf },
    #[error("split is empty")]
    EmptySplit,
    #[error("batch_size must be >= 1")]
    ZeroBatchSize,
    #[error("batch features disagree in shape ({0:?} vs {1:?})")]
    RaggedBatch(Vec<usize>, Vec<usize>),
    #[error("invalid toy spec: {0}")]
    InvalidToySpec(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One example: resolved audio path plus labels.
#[derive(Debug, Clone)]
pub struct DataItem {
    pub path: PathBuf,
    pub labels: LabelVector,
    /// Single-label class index, when the dataset is single-label.
    pub class_index: Option<usize>,
}

/// A train or eval subset ready for the loader.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub items: Vec<DataItem>,
    pub n_classes: usize,
    pub mode: LabelMode,
}

/// How hard to validate a folded manifest: `Strict` enforces the canonical
/// 2000-row, 50-class, 8-per-class-per-fold structure; `Lax` accepts any
/// folded layout (toy corpora).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    Strict,
    Lax,
}

#[derive(Debug, Clone)]
pub struct Esc50Row {
    pub path: PathBuf,
    pub fold: u8,
    pub class_index: usize,
}

/// Folded single-label manifest.
#[derive(Debug, Clone)]
pub struct Esc50Manifest {
    rows: Vec<Esc50Row>,
    n_classes: usize,
}

#[derive(Deserialize)]
struct Esc50CsvRow {
    filename: String,
    fold: u8,
    target: usize,
}

/// Load a folded manifest CSV (`filename,fold,target`; extra columns are
/// ignored) and resolve filenames against `audio_dir`.
pub fn load_esc50(
    meta_csv: &Path,
    audio_dir: &Path,
    strictness: Strictness,
) -> Result<Esc50Manifest, DatasetError> {
    let file = std::fs::File::open(meta_csv).map_err(|source| DatasetError::ManifestUnreadable {
        path: meta_csv.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.deserialize::<Esc50CsvRow>() {
        let record = record.map_err(|e| DatasetError::MalformedManifest {
            path: meta_csv.to_path_buf(),
            detail: e.to_string(),
        })?;
        if !(1..=5).contains(&record.fold) {
            return Err(DatasetError::BadFold(record.fold));
        }
        if !seen.insert(record.filename.clone()) {
            return Err(DatasetError::DuplicatePath(PathBuf::from(record.filename)));
        }
        rows.push(Esc50Row {
            path: audio_dir.join(&record.filename),
            fold: record.fold,
            class_index: record.target,
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::MalformedManifest {
            path: meta_csv.to_path_buf(),
            detail: "no rows".to_string(),
        });
    }

    let n_classes = match strictness {
        Strictness::Strict => 50,
        Strictness::Lax => rows.iter().map(|r| r.class_index).max().unwrap() + 1,
    };

    if strictness == Strictness::Strict {
        if rows.len() != 2000 {
            return Err(DatasetError::StrictViolation(format!(
                "expected 2000 rows, found {}",
                rows.len()
            )));
        }
        let mut counts = vec![[0usize; 5]; 50];
        for row in &rows {
            if row.class_index >= 50 {
                return Err(DatasetError::StrictViolation(format!(
                    "class {} outside 0..50",
                    row.class_index
                )));
            }
            counts[row.class_index][(row.fold - 1) as usize] += 1;
        }
        for (class, folds) in counts.iter().enumerate() {
            for (fold, &n) in folds.iter().enumerate() {
                if n != 8 {
                    return Err(DatasetError::StrictViolation(format!(
                        "class {class} has {n} examples in fold {}, expected 8",
                        fold + 1
                    )));
                }
            }
        }
    } else {
        for row in &rows {
            if row.class_index >= n_classes {
                return Err(DatasetError::ClassOutOfRange {
                    class: row.class_index,
                    n_classes,
                });
            }
        }
    }

    Ok(Esc50Manifest { rows, n_classes })
}

impl Esc50Manifest {
    pub fn rows(&self) -> &[Esc50Row] {
        &self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Folds present in the manifest.
    pub fn folds(&self) -> BTreeSet<u8> {
        self.rows.iter().map(|r| r.fold).collect()
    }

    /// Per-class example counts across the whole manifest.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for row in &self.rows {
            counts[row.class_index] += 1;
        }
        counts
    }

    fn item(&self, row: &Esc50Row) -> DataItem {
        DataItem {
            path: row.path.clone(),
            labels: LabelVector::one_hot(self.n_classes, row.class_index)
                .expect("row class checked at load"),
            class_index: Some(row.class_index),
        }
    }

    /// Withhold `eval_fold` for evaluation, train on the rest.
    pub fn folds_split(&self, eval_fold: u8) -> Result<(DataSplit, DataSplit), DatasetError> {
        if !(1..=5).contains(&eval_fold) {
            return Err(DatasetError::BadFold(eval_fold));
        }
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for row in &self.rows {
            if row.fold == eval_fold {
                eval.push(self.item(row));
            } else {
                train.push(self.item(row));
            }
        }
        if eval.is_empty() {
            return Err(DatasetError::MissingFold(eval_fold));
        }
        let split = |items| DataSplit {
            items,
            n_classes: self.n_classes,
            mode: LabelMode::SingleLabel,
        };
        Ok((split(train), split(eval)))
    }
}

/// Multi-label manifest with train/eval split tags.
#[derive(Debug, Clone)]
pub struct MultiLabelManifest {
    items: Vec<(PathBuf, Vec<usize>, bool)>, // (path, labels, is_eval)
    n_classes: usize,
}

/// Load the neutral multi-label CSV:
///
/// ```text
/// n_classes,8
/// path,labels,split
/// audio/a.wav,0;3,train
/// audio/b.wav,2,eval
/// ```
pub fn load_multi_label(manifest_csv: &Path) -> Result<MultiLabelManifest, DatasetError> {
    let text = std::fs::read_to_string(manifest_csv).map_err(|source| {
        DatasetError::ManifestUnreadable {
            path: manifest_csv.to_path_buf(),
            source,
        }
    })?;
    let malformed = |detail: String| DatasetError::MalformedManifest {
        path: manifest_csv.to_path_buf(),
        detail,
    };
    let base = manifest_csv.parent().unwrap_or(Path::new(""));

    let mut lines = text.lines();
    let n_classes: usize = match lines.next() {
        Some(first) => {
            let mut parts = first.split(',');
            match (parts.next(), parts.next()) {
                (Some("n_classes"), Some(k)) => k
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("bad n_classes value {k:?}")))?,
                _ => return Err(malformed("first line must be `n_classes,<K>`".to_string())),
            }
        }
        None => return Err(malformed("empty manifest".to_string())),
    };
    match lines.next() {
        Some("path,labels,split") => {}
        other => {
            return Err(malformed(format!(
                "second line must be `path,labels,split`, found {other:?}"
            )))
        }
    }

    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(format!(
                "line {}: expected 3 fields, found {}",
                lineno + 3,
                fields.len()
            )));
        }
        let path = base.join(fields[0]);
        if !seen.insert(path.clone()) {
            return Err(DatasetError::DuplicatePath(path));
        }
        let labels: Vec<usize> = fields[1]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| malformed(format!("line {}: bad label {s:?}", lineno + 3)))
            })
            .collect::<Result<_, _>>()?;
        if labels.is_empty() {
            return Err(DatasetError::EmptyLabelSet { path });
        }
        for &label in &labels {
            if label >= n_classes {
                return Err(DatasetError::ClassOutOfRange {
                    class: label,
                    n_classes,
                });
            }
        }
        let is_eval = match fields[2] {
            "train" => false,
            "eval" => true,
            other => {
                return Err(malformed(format!(
                    "line {}: bad split {other:?}",
                    lineno + 3
                )))
            }
        };
        items.push((path, labels, is_eval));
    }
    if items.is_empty() {
        return Err(malformed("no data rows".to_string()));
    }
    Ok(MultiLabelManifest { items, n_classes })
}

impl MultiLabelManifest {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn splits(&self) -> Result<(DataSplit, DataSplit), DatasetError> {
        let make = |want_eval: bool| -> Result<Vec<DataItem>, DatasetError> {
            self.items
                .iter()
                .filter(|(_, _, is_eval)| *is_eval == want_eval)
                .map(|(path, labels, _)| {
                    Ok(DataItem {
                        path: path.clone(),
                        labels: LabelVector::from_indices(self.n_classes, labels)?,
                        class_index: None,
                    })
                })
                .collect()
        };
        let train = make(false)?;
        let eval = make(true)?;
        if train.is_empty() || eval.is_empty() {
            return Err(DatasetError::EmptySplit);
        }
        let split = |items| DataSplit {
            items,
            n_classes: self.n_classes,
            mode: LabelMode::MultiLabel,
        };
        Ok((split(train), split(eval)))
    }
}

impl DataSplit {
    /// Count of positive labels per class; the input to inverse-frequency
    /// class weighting.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for item in &self.items {
            for class in item.labels.positive_indices() {
                counts[class] += 1;
            }
        }
        counts
    }
}

/// Feature extraction and worker settings shared by every loader call.
#[derive(Debug, Clone)]
pub struct LoaderOpts {
    pub features: FeatureConfig,
    pub clip_seconds: f64,
    pub workers: usize,
}

impl Default for LoaderOpts {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            clip_seconds: 5.0,
            workers: 1,
        }
    }
}

/// Batch targets: class indices (single-label) or a multi-hot matrix
/// (multi-label; NDA negatives are all-zero rows).
#[derive(Debug, Clone)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    MultiHot(Array2<f32>),
}

/// One assembled batch.
#[derive(Debug, Clone)]
pub struct Batch<F: Scalar> {
    /// `(B, 1, n_mels, frames)`.
    pub features: Array4<F>,
    pub targets: BatchTargets,
    /// Dataset indices the rows came from, in batch order.
    pub indices: Vec<usize>,
}

const TAG_ORDER: u64 = 1;
const TAG_EXAMPLE: u64 = 2;

/// Load, augment, featurize, and batch one epoch of a split.
///
/// Shuffle order comes from `(seed, epoch)`; each example's augmentation
/// stream from `(seed, epoch, example_index)`; mixup partners are the next
/// example in the shuffled order. The final short batch is kept. Output is
/// bitwise independent of `opts.workers`.
pub fn batch_iter<F: Scalar>(
    split: &DataSplit,
    augment: &AugmentSpec,
    opts: &LoaderOpts,
    batch_size: usize,
    epoch: usize,
    seed: &SeededRng,
) -> Result<Vec<Batch<F>>, DatasetError> {
    let mut order: Vec<usize> = (0..split.items.len()).collect();
    seed.derive(&[TAG_ORDER, epoch as u64]).shuffle(&mut order);
    batches_in_order(split, augment, opts, batch_size, epoch, seed, &order, true)
}

/// Featurize a split in manifest order with no augmentation (evaluation).
pub fn eval_batches<F: Scalar>(
    split: &DataSplit,
    opts: &LoaderOpts,
    batch_size: usize,
) -> Result<Vec<Batch<F>>, DatasetError> {
    let order: Vec<usize> = (0..split.items.len()).collect();
    batches_in_order(
        split,
        &AugmentSpec::disabled(),
        opts,
        batch_size,
        0,
        &SeededRng::new(0),
        &order,
        false,
    )
}

#[allow(clippy::too_many_arguments)]
fn batches_in_order<F: Scalar>(
    split: &DataSplit,
    augment: &AugmentSpec,
    opts: &LoaderOpts,
    batch_size: usize,
    epoch: usize,
    seed: &SeededRng,
    order: &[usize],
    with_partners: bool,
) -> Result<Vec<Batch<F>>, DatasetError> {
    if split.items.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    if batch_size == 0 {
        return Err(DatasetError::ZeroBatchSize);
    }
    let pipeline = AugmentPipeline::new(
        augment.clone(),
        opts.features.clone(),
        opts.clip_seconds,
        split.mode,
    )?;
    let want_partners = with_partners && augment.mixup.probability > 0.0;

    let prepare = |pos: usize| -> Result<LabeledExample, DatasetError> {
        let idx = order[pos];
        let item = &split.items[idx];
        let clip = load_wav(&item.path)?;
        let example = LabeledExample::positive(Payload::Clip(clip), item.labels.clone());
        let partner = if want_partners && order.len() > 1 {
            let partner_item = &split.items[order[(pos + 1) % order.len()]];
            Some(LabeledExample::positive(
                Payload::Clip(load_wav(&partner_item.path)?),
                partner_item.labels.clone(),
            ))
        } else {
            None
        };
        let mut rng = seed.derive(&[TAG_EXAMPLE, epoch as u64, idx as u64]);
        Ok(pipeline.apply(&example, &mut rng, partner.as_ref())?)
    };

    let examples: Vec<Result<LabeledExample, DatasetError>> = if opts.workers <= 1 {
        (0..order.len()).map(prepare).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| DatasetError::Io(std::io::Error::other(e)))?;
        pool.install(|| (0..order.len()).into_par_iter().map(prepare).collect())
    };

    let mut prepared = Vec::with_capacity(examples.len());
    for ex in examples {
        prepared.push(ex?);
    }

    let mut batches = Vec::new();
    for (chunk_pos, chunk) in prepared.chunks(batch_size).enumerate() {
        let first = chunk[0].payload.as_spec()?;
        let (n_mels, n_frames) = first.values.dim();
        let mut features = Array4::<F>::zeros((chunk.len(), 1, n_mels, n_frames));
        let mut classes = Vec::with_capacity(chunk.len());
        let mut multihot = Array2::<f32>::zeros((chunk.len(), split.n_classes));
        for (row, ex) in chunk.iter().enumerate() {
            let spec = ex.payload.as_spec()?;
            if spec.values.dim() != (n_mels, n_frames) {
                return Err(DatasetError::RaggedBatch(
                    vec![n_mels, n_frames],
                    spec.values.shape().to_vec(),
                ));
            }
            for ((i, j), &v) in spec.values.indexed_iter() {
                features[[row, 0, i, j]] = F::cast_from_f64(v);
            }
            match split.mode {
                LabelMode::SingleLabel => {
                    classes.push(ex.labels.positive_indices()[0]);
                }
                LabelMode::MultiLabel => {
                    for (k, &v) in ex.labels.values().iter().enumerate() {
                        multihot[[row, k]] = v;
                    }
                }
            }
        }
        let targets = match split.mode {
            LabelMode::SingleLabel => BatchTargets::Classes(classes),
            LabelMode::MultiLabel => BatchTargets::MultiHot(multihot),
        };
        let start = chunk_pos * batch_size;
        batches.push(Batch {
            features,
            targets,
            indices: order[start..start + chunk.len()].to_vec(),
        });
    }
    Ok(batches)
}
