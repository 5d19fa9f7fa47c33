//! Before/after inspection of one pipeline application.

use super::{
    AugmentError, AugmentPipeline, AugmentSpec, LabelMode, LabelVector, LabeledExample, Payload,
    TransformEvent,
};
use crate::audio::{load_wav, save_wav, write_mel_csv, FeatureConfig};
use crate::rng::SeededRng;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Files written by [`run_preview`].
#[derive(Debug, Clone)]
pub struct PreviewArtifacts {
    pub before_wav: PathBuf,
    pub after_wav: PathBuf,
    pub before_mel_csv: PathBuf,
    pub after_mel_csv: PathBuf,
    pub log_json: PathBuf,
}

#[derive(Serialize)]
struct PreviewLog<'a> {
    seed: u64,
    fired: &'a [TransformEvent],
}

/// Apply the pipeline once to a WAV file and write before/after waveforms,
/// spectrogram CSVs, and a JSON log of the transforms that fired.
///
/// The preview runs in multi-label mode (the permissive superset) with a
/// single dummy class; mixup is skipped since there is no partner.
pub fn run_preview(
    input: &Path,
    spec: &AugmentSpec,
    features: &FeatureConfig,
    clip_seconds: Option<f64>,
    seed: u64,
    out_dir: &Path,
) -> Result<PreviewArtifacts, AugmentError> {
    let clip = load_wav(input)?;
    let seconds = clip_seconds.unwrap_or_else(|| clip.duration_seconds());
    let pipeline = AugmentPipeline::new(
        spec.clone(),
        features.clone(),
        seconds,
        LabelMode::MultiLabel,
    )?;

    std::fs::create_dir_all(out_dir)?;
    let paths = PreviewArtifacts {
        before_wav: out_dir.join("before.wav"),
        after_wav: out_dir.join("after.wav"),
        before_mel_csv: out_dir.join("before_mel.csv"),
        after_mel_csv: out_dir.join("after_mel.csv"),
        log_json: out_dir.join("transforms.json"),
    };

    let before = pipeline.prepare_clip(&clip)?;
    save_wav(&paths.before_wav, &before)?;
    write_mel_csv(&paths.before_mel_csv, &pipeline.featurize_only(&clip)?)?;

    let example = LabeledExample::positive(Payload::Clip(clip), LabelVector::zeros(1));
    let mut rng = SeededRng::new(seed);
    let (out, trace) = pipeline.apply_traced(&example, &mut rng, None)?;

    save_wav(&paths.after_wav, &trace.waveform)?;
    write_mel_csv(&paths.after_mel_csv, out.payload.as_spec()?)?;
    let log = serde_json::to_vec_pretty(&PreviewLog {
        seed,
        fired: &trace.events,
    })
    .expect("preview log serializes");
    std::fs::write(&paths.log_json, log)?;

    Ok(paths)
}
