//! Synthetic sine-mixture corpus for desk-scale experiments.
//!
//! Each class is a sine frequency; clips are that sine (or, multi-label, a
//! superposition of 1-3 class sines) plus a Gaussian noise floor. The
//! corpus is linearly separable in mel space by construction, and the same
//! spec + seed always writes byte-identical files.

use super::DatasetError;
use crate::audio::{mel_matrix, save_wav, AudioClip, FeatureConfig};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

fn default_n_classes() -> usize {
    4
}
fn default_examples_per_class() -> usize {
    40
}
fn default_clip_seconds() -> f64 {
    1.0
}
fn default_sample_rate() -> u32 {
    16_000
}
fn default_noise_amplitude() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetSpec {
    pub n_classes: usize,
    pub examples_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// One sine frequency per class; `None` spaces them geometrically over
    /// 300..5000 Hz.
    pub class_freqs_hz: Option<Vec<f64>>,
    pub noise_amplitude: f64,
    /// Superimpose 1-3 class sines per clip and emit a multi-label
    /// manifest instead of a folded single-label one.
    pub multi_label: bool,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            n_classes: default_n_classes(),
            examples_per_class: default_examples_per_class(),
            clip_seconds: default_clip_seconds(),
            sample_rate: default_sample_rate(),
            class_freqs_hz: None,
            noise_amplitude: default_noise_amplitude(),
            multi_label: false,
            seed: 0,
        }
    }
}

impl ToyDatasetSpec {
    pub fn frequencies(&self) -> Vec<f64> {
        match &self.class_freqs_hz {
            Some(f) => f.clone(),
            None => {
                let (lo, hi) = (300.0f64, 5000.0f64);
                (0..self.n_classes)
                    .map(|c| {
                        if self.n_classes == 1 {
                            lo
                        } else {
                            lo * (hi / lo).powf(c as f64 / (self.n_classes - 1) as f64)
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidToySpec(m));
        if self.n_classes == 0 || self.examples_per_class == 0 {
            return bad("need at least one class and one example per class".into());
        }
        if !(self.clip_seconds > 0.0) || self.sample_rate == 0 {
            return bad("clip_seconds and sample_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise_amplitude) {
            return bad(format!(
                "noise_amplitude {} outside [0, 1)",
                self.noise_amplitude
            ));
        }
        let freqs = self.frequencies();
        if freqs.len() != self.n_classes {
            return bad(format!(
                "{} frequencies for {} classes",
                freqs.len(),
                self.n_classes
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if freqs.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
            return bad("class frequencies must be inside (0, nyquist)".into());
        }
        // Class tones must be separated by at least two mel bands of the
        // stock 80-band layout, otherwise they blur together downstream.
        let features = FeatureConfig {
            sample_rate: self.sample_rate,
            ..FeatureConfig::default()
        };
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let band_mels =
            (mel(features.fmax_hz()) - mel(features.fmin)) / (features.n_mels + 1) as f64;
        let mut sorted = freqs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in sorted.windows(2) {
            let gap = mel(pair[1]) - mel(pair[0]);
            if gap < 2.0 * band_mels {
                return bad(format!(
                    "class frequencies {:.0} and {:.0} Hz are {gap:.1} mel apart; need >= {:.1}",
                    pair[0],
                    pair[1],
                    2.0 * band_mels
                ));
            }
        }
        Ok(())
    }
}

/// Where a generated corpus lives.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub audio_dir: PathBuf,
    /// Folded `meta.csv` (single-label) or `manifest.csv` (multi-label).
    pub manifest_csv: PathBuf,
    pub multi_label: bool,
}

const TAG_CLIP: u64 = 3;

/// Write the corpus under `out_dir` (WAVs in `audio/`, manifest beside
/// them). Deterministic: the same spec produces byte-identical output.
pub fn generate_toy(spec: &ToyDatasetSpec, out_dir: &Path) -> Result<ToyDataset, DatasetError> {
    spec.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;
    let freqs = spec.frequencies();
    let n_samples = (spec.clip_seconds * spec.sample_rate as f64).round() as usize;
    let base = SeededRng::new(spec.seed);

    let synth = |components: &[usize], rng: &mut SeededRng| -> AudioClip {
        let scale = 1.0 / components.len() as f64;
        let parts: Vec<(f64, f64, f64)> = components
            .iter()
            .map(|&c| {
                (
                    freqs[c],
                    rng.uniform(0.35, 0.6) * scale,
                    rng.uniform(0.0, 2.0 * std::f64::consts::PI),
                )
            })
            .collect();
        let samples: Vec<f64> = (0..n_samples)
            .map(|i| {
                let t = i as f64 / spec.sample_rate as f64;
                let tone: f64 = parts
                    .iter()
                    .map(|(f, a, p)| a * (2.0 * std::f64::consts::PI * f * t + p).sin())
                    .sum();
                (tone + spec.noise_amplitude * rng.normal()).clamp(-1.0, 1.0)
            })
            .collect();
        AudioClip::new(samples, spec.sample_rate).expect("synthesized samples are finite")
    };

    if spec.multi_label {
        let manifest_csv = out_dir.join("manifest.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&manifest_csv)?);
        writeln!(out, "n_classes,{}", spec.n_classes)?;
        writeln!(out, "path,labels,split")?;
        let total = spec.n_classes * spec.examples_per_class;
        for i in 0..total {
            let mut rng = base.derive(&[TAG_CLIP, i as u64]);
            let k = 1 + rng.below(3.min(spec.n_classes));
            let classes = {
                let mut picked = rng.sample_distinct(spec.n_classes, k);
                picked.sort_unstable();
                picked
            };
            let clip = synth(&classes, &mut rng);
            let name = format!("m{i:04}.wav");
            save_wav(&audio_dir.join(&name), &clip)?;
            let labels = classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let split = if i % 5 == 4 { "eval" } else { "train" };
            writeln!(out, "audio/{name},{labels},{split}")?;
        }
        out.flush()?;
        Ok(ToyDataset {
            root: out_dir.to_path_buf(),
            audio_dir,
            manifest_csv,
            multi_label: true,
        })
    } else {
        let manifest_csv = out_dir.join("meta.csv");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&manifest_csv)?);
        writeln!(out, "filename,fold,target")?;
        for class in 0..spec.n_classes {
            for e in 0..spec.examples_per_class {
                let mut rng = base.derive(&[TAG_CLIP, class as u64, e as u64]);
                let clip = synth(&[class], &mut rng);
                let name = format!("c{class:02}_e{e:03}.wav");
                save_wav(&audio_dir.join(&name), &clip)?;
                let fold = (e % 5) + 1;
                writeln!(out, "{name},{fold},{class}")?;
            }
        }
        out.flush()?;
        Ok(ToyDataset {
            root: out_dir.to_path_buf(),
            audio_dir,
            manifest_csv,
            multi_label: false,
        })
    }
}

/// The mel band a pure tone at `hz` lands in (the filter with maximum
/// response at that frequency's FFT bin).
pub fn expected_mel_band(hz: f64, features: &FeatureConfig) -> Result<usize, DatasetError> {
    let m = mel_matrix(features)?;
    let bin = (hz * features.fft_len() as f64 / features.sample_rate as f64).round() as usize;
    Ok((0..m.nrows())
        .max_by(|&a, &b| m[[a, bin]].partial_cmp(&m[[b, bin]]).unwrap())
        .unwrap_or(0))
}
