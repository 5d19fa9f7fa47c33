//! Waveform ingestion and log-mel feature extraction.
//!
//! All DSP here is computed in `f64`. Feature extraction follows the usual
//! AED recipe: 25 ms Hann windows with a 10 ms hop, magnitude-squared
//! spectrum, an 80-band triangular mel filterbank, and a natural-log
//! compression floored at `log_floor`. No per-feature normalization is
//! applied.

mod features;
mod resample;
mod wav;

pub use features::{log_mel, mel_matrix, write_mel_csv};
pub use resample::resample;
pub(crate) use resample::sinc_resample_to_len;
pub use wav::{load_wav, save_wav};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed WAV {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },
    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("cannot write {path}: {detail}")]
    WriteFailed { path: PathBuf, detail: String },
    #[error("sample rate must be > 0")]
    ZeroSampleRate,
    #[error("samples must be finite")]
    NonFiniteSamples,
    #[error("invalid feature config: {0}")]
    InvalidFeatureConfig(String),
    #[error("mel filter {index} has empty support; lower n_mels or raise fft_size")]
    EmptyMelFilter { index: usize },
    #[error("clip rate {clip} Hz does not match feature config rate {config} Hz")]
    SampleRateMismatch { clip: u32, config: u32 },
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("fix_length requires seconds > 0")]
    NonPositiveLength,
}

/// Mono waveform with its sample rate. Samples are finite; ops that declare
/// clamping keep them in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFiniteSamples);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power of the waveform.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub(crate) fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Pad with trailing zeros or truncate so the clip lasts exactly `seconds`.
///
/// Output length is `round(seconds * sample_rate)`. Idempotent.
pub fn fix_length(clip: &AudioClip, seconds: f64) -> Result<AudioClip, AudioError> {
    if !(seconds > 0.0) {
        return Err(AudioError::NonPositiveLength);
    }
    let target = (seconds * clip.sample_rate as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target, 0.0);
    AudioClip::new(samples, clip.sample_rate)
}

fn default_sample_rate() -> u32 {
    16_000
}
fn default_window_ms() -> f64 {
    25.0
}
fn default_hop_ms() -> f64 {
    10.0
}
fn default_n_mels() -> usize {
    80
}
fn default_log_floor() -> f64 {
    1e-10
}

/// Log-mel extraction parameters.
///
/// `fft_size` defaults to the smallest power of two that fits one window;
/// `fmax` defaults to Nyquist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: Option<usize>,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: default_sample_rate(),
            window_ms: default_window_ms(),
            hop_ms: default_hop_ms(),
            fft_size: None,
            n_mels: default_n_mels(),
            fmin: 0.0,
            fmax: None,
            log_floor: default_log_floor(),
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_samples().next_power_of_two())
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Number of frames produced for a clip of `n` samples.
    pub fn frames_for(&self, n: usize) -> usize {
        let w = self.window_samples();
        if n < w {
            0
        } else {
            1 + (n - w) / self.hop_samples()
        }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let err = |m: &str| Err(AudioError::InvalidFeatureConfig(m.to_string()));
        if self.sample_rate == 0 {
            return err("sample_rate must be > 0");
        }
        if !(self.window_ms > 0.0) || !(self.hop_ms > 0.0) {
            return err("window_ms and hop_ms must be > 0");
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return err("window and hop must span at least one sample");
        }
        if self.fft_len() < self.window_samples() {
            return err("fft_size must be >= window samples");
        }
        if self.n_mels < 1 {
            return err("n_mels must be >= 1");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax_hz() && self.fmax_hz() <= nyquist) {
            return err("need 0 <= fmin < fmax <= sample_rate/2");
        }
        if !(self.log_floor > 0.0) {
            return err("log_floor must be > 0");
        }
        Ok(())
    }
}

/// Log-mel spectrogram: `n_mels x n_frames`, every value `>= ln(log_floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub values: Array2<f64>,
    pub config: FeatureConfig,
}

impl MelSpec {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// The value silence maps to: `ln(log_floor)`.
    pub fn floor_value(&self) -> f64 {
        self.config.log_floor.ln()
    }
}
