//! On-the-fly augmentation pipeline.
//!
//! Each incoming example is given an independent chance per transform.
//! The stage order is fixed: waveform transforms (gain, pitch shift, time
//! stretch, noise, band-pass, resample round trip), then `fix_length`, then
//! mixup, then featurization, then spectrogram transforms (frame dropout,
//! NDA). Mixup forms the convex combination of two waveforms but unions the
//! label sets: a 0.6/0.4 mix of two classes has *both* labels at 1. NDA
//! outputs are negative examples: all labels zero, `is_negative` set.
//!
//! Single-label mode forbids mixup and NDA; that is checked when the
//! pipeline (or spec) is validated, before any data is touched.
//!
//! Everything is a pure function of its inputs and the supplied
//! [`SeededRng`], so a (seed, example) pair reproduces output bit-for-bit.

mod preview;
mod spectrogram;
mod waveform;

pub use preview::{run_preview, PreviewArtifacts};
pub use spectrogram::{nda, zero_frames, NdaGeometry, NdaVariant};
pub use waveform::{add_noise, apply_gain, bandpass, pitch_shift, resample_roundtrip, time_stretch};

use crate::audio::{fix_length, log_mel, resample, AudioClip, AudioError, FeatureConfig, MelSpec};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{0} must be finite")]
    NonFiniteParameter(&'static str),
    #[error("time-stretch rate {0} outside [0.5, 2.0]")]
    StretchRateOutOfRange(f64),
    #[error("pitch shift {0} semitones outside [-12, 12]")]
    PitchOutOfRange(f64),
    #[error("SNR is undefined for a zero-energy clip")]
    ZeroEnergyClip,
    #[error("invalid band [{low}, {high}] Hz")]
    InvalidBand { low: f64, high: f64 },
    #[error("mixup requires equal-length clips ({a} vs {b} samples)")]
    MixupLengthMismatch { a: usize, b: usize },
    #[error("mixup requires equal sample rates ({a} vs {b} Hz)")]
    MixupRateMismatch { a: u32, b: u32 },
    #[error("mixup ratio {0} outside (0, 1)")]
    MixupRatioOutOfRange(f64),
    #[error("{0} is not available in single-label mode")]
    SingleLabelModeViolation(&'static str),
    #[error("label vectors have different lengths ({a} vs {b})")]
    LabelLengthMismatch { a: usize, b: usize },
    #[error("label entries must be 0 or 1")]
    NonBinaryLabel,
    #[error("class index {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("invalid augment spec: {0}")]
    InvalidSpec(String),
    #[error("pipeline expects a waveform payload at this stage")]
    ExpectedWaveform,
    #[error("pipeline expects a spectrogram payload at this stage")]
    ExpectedSpectrogram,
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Whether the owning dataset is single-label (one class per example) or
/// multi-label. The mode is always explicit, never inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    SingleLabel,
    MultiLabel,
}

/// Multi-hot label vector; entries are 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(Vec<f32>);

impl LabelVector {
    pub fn zeros(n_classes: usize) -> Self {
        Self(vec![0.0; n_classes])
    }

    pub fn one_hot(n_classes: usize, class: usize) -> Result<Self, AugmentError> {
        Self::from_indices(n_classes, &[class])
    }

    pub fn from_indices(n_classes: usize, classes: &[usize]) -> Result<Self, AugmentError> {
        let mut v = vec![0.0; n_classes];
        for &c in classes {
            if c >= n_classes {
                return Err(AugmentError::ClassOutOfRange {
                    class: c,
                    n_classes,
                });
            }
            v[c] = 1.0;
        }
        Ok(Self(v))
    }

    pub fn try_from_values(values: Vec<f32>) -> Result<Self, AugmentError> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(AugmentError::NonBinaryLabel);
        }
        Ok(Self(values))
    }

    /// Elementwise max: the label set union.
    pub fn union(a: &Self, b: &Self) -> Result<Self, AugmentError> {
        if a.len() != b.len() {
            return Err(AugmentError::LabelLengthMismatch {
                a: a.len(),
                b: b.len(),
            });
        }
        Ok(Self(
            a.0.iter().zip(&b.0).map(|(x, y)| x.max(*y)).collect(),
        ))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Stage-tagged example payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Clip(AudioClip),
    Spec(MelSpec),
}

impl Payload {
    pub fn as_clip(&self) -> Result<&AudioClip, AugmentError> {
        match self {
            Payload::Clip(c) => Ok(c),
            Payload::Spec(_) => Err(AugmentError::ExpectedWaveform),
        }
    }

    pub fn as_spec(&self) -> Result<&MelSpec, AugmentError> {
        match self {
            Payload::Spec(s) => Ok(s),
            Payload::Clip(_) => Err(AugmentError::ExpectedSpectrogram),
        }
    }
}

/// A clip or spectrogram with its labels. `is_negative` implies all labels
/// are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub payload: Payload,
    pub labels: LabelVector,
    pub is_negative: bool,
}

impl LabeledExample {
    pub fn positive(payload: Payload, labels: LabelVector) -> Self {
        Self {
            payload,
            labels,
            is_negative: false,
        }
    }

    pub fn negative(payload: Payload, n_classes: usize) -> Self {
        Self {
            payload,
            labels: LabelVector::zeros(n_classes),
            is_negative: true,
        }
    }
}

/// Convex waveform combination with union labels.
///
/// `samples = ratio * a + (1 - ratio) * b`; the labels are the elementwise
/// max of both label vectors regardless of the ratio. Multi-label mode only.
pub fn mixup(
    a: &LabeledExample,
    b: &LabeledExample,
    ratio: f64,
    mode: LabelMode,
) -> Result<LabeledExample, AugmentError> {
    if mode == LabelMode::SingleLabel {
        return Err(AugmentError::SingleLabelModeViolation("mixup"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(AugmentError::MixupRatioOutOfRange(ratio));
    }
    let ca = a.payload.as_clip()?;
    let cb = b.payload.as_clip()?;
    if ca.len() != cb.len() {
        return Err(AugmentError::MixupLengthMismatch {
            a: ca.len(),
            b: cb.len(),
        });
    }
    if ca.sample_rate() != cb.sample_rate() {
        return Err(AugmentError::MixupRateMismatch {
            a: ca.sample_rate(),
            b: cb.sample_rate(),
        });
    }
    let samples = ca
        .samples()
        .iter()
        .zip(cb.samples())
        .map(|(x, y)| ratio * x + (1.0 - ratio) * y)
        .collect();
    Ok(LabeledExample {
        payload: Payload::Clip(AudioClip::new(samples, ca.sample_rate())?),
        labels: LabelVector::union(&a.labels, &b.labels)?,
        is_negative: false,
    })
}

/// A transform applied with some probability, drawing its parameter
/// uniformly from `range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangedTransform {
    pub probability: f64,
    pub range: [f64; 2],
}

impl RangedTransform {
    pub const fn off(range: [f64; 2]) -> Self {
        Self {
            probability: 0.0,
            range,
        }
    }

    pub const fn on(probability: f64, range: [f64; 2]) -> Self {
        Self { probability, range }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassTransform {
    pub probability: f64,
    pub low_hz: [f64; 2],
    pub high_hz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleRoundtripTransform {
    pub probability: f64,
    pub rates_hz: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupTransform {
    pub probability: f64,
    pub ratio_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NdaTransform {
    pub probability: f64,
    pub freq_shuffle_weight: f64,
    pub time_shuffle_weight: f64,
    pub jigsaw_weight: f64,
    pub cutout_weight: f64,
    pub jigsaw_grid: [usize; 2],
    pub cutout_max_area: f64,
}

impl NdaTransform {
    fn geometry(&self) -> NdaGeometry {
        NdaGeometry {
            jigsaw_rows: self.jigsaw_grid[0],
            jigsaw_cols: self.jigsaw_grid[1],
            cutout_max_area: self.cutout_max_area,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [
            self.freq_shuffle_weight,
            self.time_shuffle_weight,
            self.jigsaw_weight,
            self.cutout_weight,
        ]
    }
}

/// Per-transform probabilities and parameter ranges for the pipeline.
///
/// `Default` is the fully disabled spec; [`AugmentSpec::multi_label_default`]
/// and [`AugmentSpec::single_label_default`] give the stock experiment
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub gain: RangedTransform,
    pub pitch: RangedTransform,
    pub stretch: RangedTransform,
    pub noise: RangedTransform,
    pub bandpass: BandpassTransform,
    pub zero_frames: RangedTransform,
    pub resample_roundtrip: ResampleRoundtripTransform,
    pub mixup: MixupTransform,
    pub nda: NdaTransform,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self::disabled()
    }
}

impl AugmentSpec {
    /// Every probability zero; parameter ranges at their stock values.
    pub fn disabled() -> Self {
        Self {
            gain: RangedTransform::off([-6.0, 6.0]),
            pitch: RangedTransform::off([-2.0, 2.0]),
            stretch: RangedTransform::off([0.85, 1.15]),
            noise: RangedTransform::off([5.0, 30.0]),
            bandpass: BandpassTransform {
                probability: 0.0,
                low_hz: [50.0, 500.0],
                high_hz: [2000.0, 8000.0],
            },
            zero_frames: RangedTransform::off([0.0, 0.1]),
            resample_roundtrip: ResampleRoundtripTransform {
                probability: 0.0,
                rates_hz: vec![8_000, 22_050, 32_000],
            },
            mixup: MixupTransform {
                probability: 0.0,
                ratio_range: [0.3, 0.7],
            },
            nda: NdaTransform {
                probability: 0.0,
                freq_shuffle_weight: 1.0,
                time_shuffle_weight: 1.0,
                jigsaw_weight: 1.0,
                cutout_weight: 1.0,
                jigsaw_grid: [4, 4],
                cutout_max_area: 0.3,
            },
        }
    }

    /// Stock waveform/spectrogram probabilities, no mixup or NDA.
    pub fn single_label_default() -> Self {
        let mut spec = Self::disabled();
        spec.gain.probability = 0.25;
        spec.pitch.probability = 0.25;
        spec.stretch.probability = 0.25;
        spec.noise.probability = 0.25;
        spec.bandpass.probability = 0.15;
        spec.zero_frames.probability = 0.25;
        spec.resample_roundtrip.probability = 0.1;
        spec
    }

    /// Stock probabilities including mixup and NDA.
    pub fn multi_label_default() -> Self {
        let mut spec = Self::single_label_default();
        spec.mixup.probability = 0.5;
        spec.nda.probability = 0.25;
        spec
    }

    /// True when no transform can ever fire.
    pub fn is_disabled(&self) -> bool {
        [
            self.gain.probability,
            self.pitch.probability,
            self.stretch.probability,
            self.noise.probability,
            self.bandpass.probability,
            self.zero_frames.probability,
            self.resample_roundtrip.probability,
            self.mixup.probability,
            self.nda.probability,
        ]
        .iter()
        .all(|&p| p == 0.0)
    }

    pub fn validate(&self, mode: LabelMode) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidSpec(m));
        let probs = [
            ("gain", self.gain.probability),
            ("pitch", self.pitch.probability),
            ("stretch", self.stretch.probability),
            ("noise", self.noise.probability),
            ("bandpass", self.bandpass.probability),
            ("zero_frames", self.zero_frames.probability),
            ("resample_roundtrip", self.resample_roundtrip.probability),
            ("mixup", self.mixup.probability),
            ("nda", self.nda.probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        for (name, t, lo, hi) in [
            ("gain", &self.gain, -60.0, 60.0),
            ("pitch", &self.pitch, -12.0, 12.0),
            ("stretch", &self.stretch, 0.5, 2.0),
            ("noise", &self.noise, -60.0, 120.0),
            ("zero_frames", &self.zero_frames, 0.0, 1.0),
        ] {
            if !(t.range[0] <= t.range[1]) {
                return bad(format!("{name} range is inverted"));
            }
            if t.range[0] < lo || t.range[1] > hi {
                return bad(format!("{name} range outside [{lo}, {hi}]"));
            }
        }
        if !(self.bandpass.low_hz[0] > 0.0
            && self.bandpass.low_hz[0] <= self.bandpass.low_hz[1]
            && self.bandpass.low_hz[1] < self.bandpass.high_hz[0]
            && self.bandpass.high_hz[0] <= self.bandpass.high_hz[1])
        {
            return bad("bandpass ranges must satisfy 0 < low <= high bands".to_string());
        }
        if self.resample_roundtrip.probability > 0.0 && self.resample_roundtrip.rates_hz.is_empty()
        {
            return bad("resample_roundtrip has no rates".to_string());
        }
        if self.resample_roundtrip.rates_hz.iter().any(|&r| r == 0) {
            return bad("resample_roundtrip rates must be > 0".to_string());
        }
        if !(self.mixup.ratio_range[0] > 0.0
            && self.mixup.ratio_range[0] <= self.mixup.ratio_range[1]
            && self.mixup.ratio_range[1] < 1.0)
        {
            return bad("mixup ratio range must lie inside (0, 1)".to_string());
        }
        if self.nda.jigsaw_grid[0] == 0 || self.nda.jigsaw_grid[1] == 0 {
            return bad("jigsaw grid must be at least 1x1".to_string());
        }
        if !(self.nda.cutout_max_area > 0.0 && self.nda.cutout_max_area <= 1.0) {
            return bad("cutout_max_area must be in (0, 1]".to_string());
        }
        let w = self.nda.weights();
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return bad("nda weights must be finite and nonnegative".to_string());
        }
        if self.nda.probability > 0.0 && w.iter().sum::<f64>() <= 0.0 {
            return bad("nda is enabled but all variant weights are zero".to_string());
        }
        if mode == LabelMode::SingleLabel {
            if self.mixup.probability > 0.0 {
                return Err(AugmentError::SingleLabelModeViolation("mixup"));
            }
            if self.nda.probability > 0.0 {
                return Err(AugmentError::SingleLabelModeViolation("nda"));
            }
        }
        Ok(())
    }
}

/// One transform that actually fired, with its drawn parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformEvent {
    Gain { db: f64 },
    PitchShift { semitones: f64 },
    TimeStretch { rate: f64 },
    Noise { snr_db: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
    ResampleRoundtrip { rate_hz: u32 },
    Mixup { ratio: f64 },
    ZeroFrames { fraction: f64 },
    Nda { variant: NdaVariant },
}

/// What happened during one pipeline application.
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    /// Transforms that fired, in application order.
    pub events: Vec<TransformEvent>,
    /// The waveform as it entered featurization (post mixup, fixed length).
    pub waveform: AudioClip,
}

/// The validated end-to-end augmentation pipeline.
#[derive(Debug, Clone)]
pub struct AugmentPipeline {
    spec: AugmentSpec,
    features: FeatureConfig,
    clip_seconds: f64,
    mode: LabelMode,
}

impl AugmentPipeline {
    pub fn new(
        spec: AugmentSpec,
        features: FeatureConfig,
        clip_seconds: f64,
        mode: LabelMode,
    ) -> Result<Self, AugmentError> {
        spec.validate(mode)?;
        features.validate()?;
        if !(clip_seconds > 0.0) {
            return Err(AugmentError::InvalidSpec(
                "clip_seconds must be > 0".to_string(),
            ));
        }
        Ok(Self {
            spec,
            features,
            clip_seconds,
            mode,
        })
    }

    pub fn spec(&self) -> &AugmentSpec {
        &self.spec
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn clip_seconds(&self) -> f64 {
        self.clip_seconds
    }

    /// Rate-standardize and length-fix a raw clip (the un-augmented path,
    /// also used for mixup partners).
    pub fn prepare_clip(&self, clip: &AudioClip) -> Result<AudioClip, AugmentError> {
        let clip = resample(clip, self.features.sample_rate)?;
        Ok(fix_length(&clip, self.clip_seconds)?)
    }

    /// Featurization with no augmentation: `log_mel(fix_length(clip))`.
    pub fn featurize_only(&self, clip: &AudioClip) -> Result<MelSpec, AugmentError> {
        Ok(log_mel(&self.prepare_clip(clip)?, &self.features)?)
    }

    pub fn apply(
        &self,
        example: &LabeledExample,
        rng: &mut SeededRng,
        partner: Option<&LabeledExample>,
    ) -> Result<LabeledExample, AugmentError> {
        self.apply_traced(example, rng, partner).map(|(ex, _)| ex)
    }

    /// Run the pipeline and also report which transforms fired and the
    /// pre-featurization waveform.
    pub fn apply_traced(
        &self,
        example: &LabeledExample,
        rng: &mut SeededRng,
        partner: Option<&LabeledExample>,
    ) -> Result<(LabeledExample, PipelineTrace), AugmentError> {
        let s = &self.spec;
        let mut events = Vec::new();
        let mut clip = resample(example.payload.as_clip()?, self.features.sample_rate)?;
        let mut labels = example.labels.clone();
        let mut negative = example.is_negative;

        if rng.chance(s.gain.probability) {
            let db = rng.uniform(s.gain.range[0], s.gain.range[1]);
            clip = apply_gain(&clip, db)?;
            events.push(TransformEvent::Gain { db });
        }
        if rng.chance(s.pitch.probability) {
            let semitones = rng.uniform(s.pitch.range[0], s.pitch.range[1]);
            clip = pitch_shift(&clip, semitones)?;
            events.push(TransformEvent::PitchShift { semitones });
        }
        if rng.chance(s.stretch.probability) {
            let rate = rng.uniform(s.stretch.range[0], s.stretch.range[1]);
            clip = time_stretch(&clip, rate)?;
            events.push(TransformEvent::TimeStretch { rate });
        }
        if rng.chance(s.noise.probability) {
            let snr_db = rng.uniform(s.noise.range[0], s.noise.range[1]);
            // Silence has no defined SNR; leave it untouched.
            if clip.power() > 0.0 {
                clip = add_noise(&clip, snr_db, rng)?;
                events.push(TransformEvent::Noise { snr_db });
            }
        }
        if rng.chance(s.bandpass.probability) {
            let low_hz = rng.uniform(s.bandpass.low_hz[0], s.bandpass.low_hz[1]);
            let high_hz = rng.uniform(s.bandpass.high_hz[0], s.bandpass.high_hz[1]);
            clip = bandpass(&clip, low_hz, high_hz)?;
            events.push(TransformEvent::Bandpass { low_hz, high_hz });
        }
        if rng.chance(s.resample_roundtrip.probability) {
            let rate_hz =
                s.resample_roundtrip.rates_hz[rng.below(s.resample_roundtrip.rates_hz.len())];
            clip = resample_roundtrip(&clip, rate_hz)?;
            events.push(TransformEvent::ResampleRoundtrip { rate_hz });
        }

        let mut wave = fix_length(&clip, self.clip_seconds)?;

        if self.mode == LabelMode::MultiLabel && rng.chance(s.mixup.probability) {
            if let Some(partner) = partner {
                let partner_clip = self.prepare_clip(partner.payload.as_clip()?)?;
                let ratio = rng.uniform(s.mixup.ratio_range[0], s.mixup.ratio_range[1]);
                let partner_ex = LabeledExample::positive(
                    Payload::Clip(partner_clip),
                    partner.labels.clone(),
                );
                let current =
                    LabeledExample::positive(Payload::Clip(wave), labels.clone());
                let mixed = mixup(&current, &partner_ex, ratio, self.mode)?;
                wave = match mixed.payload {
                    Payload::Clip(c) => c,
                    Payload::Spec(_) => unreachable!("mixup returns a waveform"),
                };
                labels = mixed.labels;
                negative = false;
                events.push(TransformEvent::Mixup { ratio });
            }
        }

        let mut spec_out = log_mel(&wave, &self.features)?;

        if rng.chance(s.zero_frames.probability) {
            let fraction = rng.uniform(s.zero_frames.range[0], s.zero_frames.range[1]);
            spec_out = zero_frames(&spec_out, fraction, rng)?;
            events.push(TransformEvent::ZeroFrames { fraction });
        }
        if self.mode == LabelMode::MultiLabel && rng.chance(s.nda.probability) {
            let variants = [
                NdaVariant::FreqShuffle,
                NdaVariant::TimeShuffle,
                NdaVariant::Jigsaw,
                NdaVariant::Cutout,
            ];
            let variant = variants[rng.choose_weighted(&s.nda.weights())];
            let out = nda(&spec_out, variant, &s.nda.geometry(), rng, labels.len());
            spec_out = match out.payload {
                Payload::Spec(sp) => sp,
                Payload::Clip(_) => unreachable!("nda returns a spectrogram"),
            };
            labels = out.labels;
            negative = true;
            events.push(TransformEvent::Nda { variant });
        }

        Ok((
            LabeledExample {
                payload: Payload::Spec(spec_out),
                labels,
                is_negative: negative,
            },
            PipelineTrace {
                events,
                waveform: wave,
            },
        ))
    }
}
