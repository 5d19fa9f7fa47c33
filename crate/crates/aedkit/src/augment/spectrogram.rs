//! Spectrogram-stage transforms: frame dropout and the negative-example
//! (NDA) family.

use super::{AugmentError, LabelVector, LabeledExample, Payload};
use crate::audio::MelSpec;
use crate::rng::SeededRng;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Floor `round(fraction * n_frames)` distinct frame columns.
pub fn zero_frames(
    spec: &MelSpec,
    fraction: f64,
    rng: &mut SeededRng,
) -> Result<MelSpec, AugmentError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AugmentError::InvalidSpec(format!(
            "zero_frames fraction {fraction} outside [0, 1]"
        )));
    }
    let n_frames = spec.n_frames();
    let k = (fraction * n_frames as f64).round() as usize;
    let mut out = spec.clone();
    let floor = spec.floor_value();
    for col in rng.sample_distinct(n_frames, k) {
        out.values.column_mut(col).fill(floor);
    }
    Ok(out)
}

/// The spectrogram corruptions that produce negative examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdaVariant {
    FreqShuffle,
    TimeShuffle,
    Jigsaw,
    Cutout,
}

impl NdaVariant {
    pub fn name(self) -> &'static str {
        match self {
            NdaVariant::FreqShuffle => "freq_shuffle",
            NdaVariant::TimeShuffle => "time_shuffle",
            NdaVariant::Jigsaw => "jigsaw",
            NdaVariant::Cutout => "cutout",
        }
    }
}

/// Geometry knobs for jigsaw and cutout.
#[derive(Debug, Clone, Copy)]
pub struct NdaGeometry {
    pub jigsaw_rows: usize,
    pub jigsaw_cols: usize,
    pub cutout_max_area: f64,
}

impl Default for NdaGeometry {
    fn default() -> Self {
        Self {
            jigsaw_rows: 4,
            jigsaw_cols: 4,
            cutout_max_area: 0.3,
        }
    }
}

/// Corrupt a spectrogram into a negative example: semantics destroyed,
/// every class label zero, `is_negative` set.
pub fn nda(
    spec: &MelSpec,
    variant: NdaVariant,
    geometry: &NdaGeometry,
    rng: &mut SeededRng,
    n_classes: usize,
) -> LabeledExample {
    let values = nda_values(&spec.values, spec.floor_value(), variant, geometry, rng);
    LabeledExample {
        payload: Payload::Spec(MelSpec {
            values,
            config: spec.config.clone(),
        }),
        labels: LabelVector::zeros(n_classes),
        is_negative: true,
    }
}

fn nda_values(
    values: &Array2<f64>,
    floor: f64,
    variant: NdaVariant,
    geometry: &NdaGeometry,
    rng: &mut SeededRng,
) -> Array2<f64> {
    let (h, w) = values.dim();
    match variant {
        NdaVariant::FreqShuffle => {
            let perm = rng.permutation(h);
            let mut out = Array2::zeros((h, w));
            for (dst, &src) in perm.iter().enumerate() {
                out.row_mut(dst).assign(&values.row(src));
            }
            out
        }
        NdaVariant::TimeShuffle => {
            let perm = rng.permutation(w);
            let mut out = Array2::zeros((h, w));
            for (dst, &src) in perm.iter().enumerate() {
                out.column_mut(dst).assign(&values.column(src));
            }
            out
        }
        NdaVariant::Jigsaw => {
            let (rows, cols) = (geometry.jigsaw_rows.max(1), geometry.jigsaw_cols.max(1));
            let cell_h = h.div_ceil(rows);
            let cell_w = w.div_ceil(cols);
            // Pad to whole cells at the floor value, permute cells, crop back.
            let mut padded = Array2::from_elem((rows * cell_h, cols * cell_w), floor);
            padded.slice_mut(ndarray::s![..h, ..w]).assign(values);
            let perm = rng.permutation(rows * cols);
            let mut shuffled = Array2::from_elem(padded.dim(), floor);
            for (dst, &src) in perm.iter().enumerate() {
                let (dr, dc) = (dst / cols, dst % cols);
                let (sr, sc) = (src / cols, src % cols);
                let source = padded
                    .slice(ndarray::s![
                        sr * cell_h..(sr + 1) * cell_h,
                        sc * cell_w..(sc + 1) * cell_w
                    ])
                    .to_owned();
                shuffled
                    .slice_mut(ndarray::s![
                        dr * cell_h..(dr + 1) * cell_h,
                        dc * cell_w..(dc + 1) * cell_w
                    ])
                    .assign(&source);
            }
            shuffled.slice(ndarray::s![..h, ..w]).to_owned()
        }
        NdaVariant::Cutout => {
            let max_cells = ((geometry.cutout_max_area * (h * w) as f64).floor() as usize).max(1);
            let side = geometry.cutout_max_area.sqrt();
            let rect_h = ((rng.uniform(0.0, side) * h as f64).round() as usize).clamp(1, h);
            let mut rect_w = ((rng.uniform(0.0, side) * w as f64).round() as usize).clamp(1, w);
            rect_w = rect_w.min((max_cells / rect_h).max(1)).min(w);
            let top = rng.below(h - rect_h + 1);
            let left = rng.below(w - rect_w + 1);
            let mut out = values.clone();
            out.slice_mut(ndarray::s![top..top + rect_h, left..left + rect_w])
                .fill(floor);
            out
        }
    }
}
