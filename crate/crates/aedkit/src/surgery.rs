//! Weight-archive surgery for knowledge transfer.
//!
//! Three structural rewrites let weights trained elsewhere load into a
//! differently-shaped network: averaging a 3-channel (RGB) input
//! convolution down to 1 channel, swapping the classification head for a
//! freshly initialized one of a new size, and deleting middle-flow
//! repeats. Every operation is pure (the input archive is untouched) and
//! appends an audit line to the output's `history` metadata.
//!
//! Importing real RGB-image weights is a matter of renaming tensors to
//! this crate's scheme (`stem.conv1.weight`, `entry.<i>.sep{1,2}.*`,
//! `middle.<i>.sep{1,2,3}.*`, `exit.*`, `head.*`) and collapsing 1x1 conv
//! kernels `(o, i, 1, 1)` to `(o, i)`; the ops below do the structural
//! work once names match.

use crate::archive::{Tensor, WeightArchive};
use crate::model::{shape_catalog, ModelConfig, ModelError, HEAD_BIAS, HEAD_WEIGHT};
use crate::rng::SeededRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurgeryError {
    #[error("archive has no tensor named {0}")]
    MissingLayer(String),
    #[error("{layer} has input-channel dim {found}, need 3")]
    WrongChannelCount { layer: String, found: usize },
    #[error("{layer} has rank {found}, need a rank-4 convolution kernel")]
    NotAConvKernel { layer: String, found: usize },
    #[error("archive has no head ({HEAD_WEIGHT}/{HEAD_BIAS})")]
    HeadNotFound,
    #[error("head weight must be rank 2, found shape {0:?}")]
    MalformedHead(Vec<usize>),
    #[error("n_classes must be >= 1")]
    ZeroClasses,
    #[error("cannot keep {requested} middle blocks; archive has {present}")]
    NotEnoughMiddleBlocks { requested: usize, present: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Archive(#[from] crate::archive::ArchiveError),
}

/// Average a rank-4 kernel's 3 input channels into 1 (RGB to mono
/// spectrogram). All other entries are copied unchanged.
pub fn average_input_channels(
    archive: &WeightArchive,
    layer: &str,
) -> Result<WeightArchive, SurgeryError> {
    let tensor = archive
        .get(layer)
        .ok_or_else(|| SurgeryError::MissingLayer(layer.to_string()))?;
    let shape = tensor.shape().to_vec();
    if shape.len() != 4 {
        return Err(SurgeryError::NotAConvKernel {
            layer: layer.to_string(),
            found: shape.len(),
        });
    }
    if shape[1] != 3 {
        return Err(SurgeryError::WrongChannelCount {
            layer: layer.to_string(),
            found: shape[1],
        });
    }

    let (o, khw) = (shape[0], shape[2] * shape[3]);
    let src = tensor.data();
    let mut data = vec![0.0f32; o * khw];
    for oi in 0..o {
        for p in 0..khw {
            let mut acc = 0.0f32;
            for ci in 0..3 {
                acc += src[(oi * 3 + ci) * khw + p];
            }
            data[oi * khw + p] = acc / 3.0;
        }
    }
    let new_shape = vec![shape[0], 1, shape[2], shape[3]];

    let mut out = archive.clone();
    out.replace(layer, Tensor::new(new_shape, data)?)?;
    out.append_history(&format!("average_input_channels layer={layer}"));
    Ok(out)
}

/// Replace the head with a fresh fan-in-scaled random init of `n_classes`
/// outputs; every other tensor is byte-identical to the input archive.
pub fn replace_head(
    archive: &WeightArchive,
    n_classes: usize,
    rng: &mut SeededRng,
) -> Result<WeightArchive, SurgeryError> {
    if n_classes == 0 {
        return Err(SurgeryError::ZeroClasses);
    }
    let weight = archive.get(HEAD_WEIGHT).ok_or(SurgeryError::HeadNotFound)?;
    if archive.get(HEAD_BIAS).is_none() {
        return Err(SurgeryError::HeadNotFound);
    }
    let shape = weight.shape().to_vec();
    if shape.len() != 2 {
        return Err(SurgeryError::MalformedHead(shape));
    }
    let in_features = shape[1];
    let old_classes = shape[0];

    let bound = 1.0 / (in_features as f64).sqrt();
    let data: Vec<f32> = (0..n_classes * in_features)
        .map(|_| rng.uniform(-bound, bound) as f32)
        .collect();

    let mut out = archive.clone();
    out.replace(HEAD_WEIGHT, Tensor::new(vec![n_classes, in_features], data)?)?;
    out.replace(HEAD_BIAS, Tensor::new(vec![n_classes], vec![0.0; n_classes])?)?;
    out.append_history(&format!(
        "replace_head n_classes={n_classes} (was {old_classes})"
    ));
    Ok(out)
}

/// Number of middle-flow blocks present (max index + 1).
pub fn middle_blocks_present(archive: &WeightArchive) -> usize {
    archive
        .names()
        .filter_map(|n| {
            n.strip_prefix("middle.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|i| i.parse::<usize>().ok())
        })
        .map(|i| i + 1)
        .max()
        .unwrap_or(0)
}

/// Drop middle-flow blocks with index `>= keep_repeats`; kept tensor names
/// are unchanged, so the result loads into a config with
/// `middle_repeats = keep_repeats`.
pub fn delete_middle_flow(
    archive: &WeightArchive,
    keep_repeats: usize,
) -> Result<WeightArchive, SurgeryError> {
    let present = middle_blocks_present(archive);
    if keep_repeats > present {
        return Err(SurgeryError::NotEnoughMiddleBlocks {
            requested: keep_repeats,
            present,
        });
    }
    let mut out = archive.clone();
    let doomed: Vec<String> = archive
        .names()
        .filter(|n| {
            n.strip_prefix("middle.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i >= keep_repeats)
        })
        .map(|n| n.to_string())
        .collect();
    for name in &doomed {
        out.remove(name);
    }
    out.append_history(&format!(
        "delete_middle_flow keep_repeats={keep_repeats} (removed {} tensors)",
        doomed.len()
    ));
    Ok(out)
}

/// Archive-vs-config compatibility report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompatReport {
    /// Tensors the config needs that the archive lacks.
    pub missing: Vec<String>,
    /// Archive tensors the config does not use (load warns, not fails).
    pub extra: Vec<String>,
    /// `name: archive shape vs expected shape` strings.
    pub mismatched: Vec<String>,
}

impl CompatReport {
    /// No missing or mismatched tensors: `load_weights` will succeed.
    pub fn is_loadable(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty()
    }

    /// Nothing to report at all, extras included.
    pub fn is_empty(&self) -> bool {
        self.is_loadable() && self.extra.is_empty()
    }
}

impl std::fmt::Display for CompatReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return writeln!(f, "compatible: archive matches the config exactly");
        }
        for name in &self.missing {
            writeln!(f, "missing    {name}")?;
        }
        for name in &self.mismatched {
            writeln!(f, "mismatched {name}")?;
        }
        for name in &self.extra {
            writeln!(f, "extra      {name}")?;
        }
        Ok(())
    }
}

/// Compare an archive against the tensors a config's network would
/// require. A loadable report guarantees `load_weights` succeeds.
pub fn compatibility_check(
    archive: &WeightArchive,
    cfg: &ModelConfig,
) -> Result<CompatReport, SurgeryError> {
    let catalog = shape_catalog(cfg)?;
    let mut report = CompatReport::default();
    let mut used = std::collections::BTreeSet::new();
    for (name, _, shape) in &catalog {
        used.insert(name.clone());
        match archive.get(name) {
            None => report.missing.push(name.clone()),
            Some(t) if t.shape() != shape.as_slice() => report.mismatched.push(format!(
                "{name}: archive {:?} vs expected {:?}",
                t.shape(),
                shape
            )),
            Some(_) => {}
        }
    }
    for name in archive.names() {
        if !used.contains(name) {
            report.extra.push(name.to_string());
        }
    }
    Ok(report)
}
