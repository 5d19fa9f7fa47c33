//! Label-preserving waveform transforms.

use super::AugmentError;
use crate::audio::{resample, AudioClip};
use crate::rng::SeededRng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Scale by `10^(db/20)`, clamped to `[-1, 1]`.
pub fn apply_gain(clip: &AudioClip, db: f64) -> Result<AudioClip, AugmentError> {
    if !db.is_finite() {
        return Err(AugmentError::NonFiniteParameter("gain db"));
    }
    if db == 0.0 {
        return Ok(clip.clone());
    }
    let scale = 10f64.powf(db / 20.0);
    let samples = clip
        .samples()
        .iter()
        .map(|s| (s * scale).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate())?)
}

/// Add white Gaussian noise at the requested signal-to-noise ratio,
/// then clamp to `[-1, 1]`.
pub fn add_noise(clip: &AudioClip, snr_db: f64, rng: &mut SeededRng) -> Result<AudioClip, AugmentError> {
    if !snr_db.is_finite() {
        return Err(AugmentError::NonFiniteParameter("noise snr_db"));
    }
    let signal_power = clip.power();
    if signal_power == 0.0 {
        return Err(AugmentError::ZeroEnergyClip);
    }
    let noise: Vec<f64> = (0..clip.len()).map(|_| rng.normal()).collect();
    let raw_power = noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let scale = (target_power / raw_power).sqrt();
    let samples = clip
        .samples()
        .iter()
        .zip(&noise)
        .map(|(s, n)| (s + scale * n).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate())?)
}

/// Zero-phase band-pass: RBJ 2nd-order Butterworth high-pass at `low` and
/// low-pass at `high`, each applied forward and backward (4th-order
/// magnitude response per edge, no phase distortion).
pub fn bandpass(clip: &AudioClip, low_hz: f64, high_hz: f64) -> Result<AudioClip, AugmentError> {
    let nyquist = clip.sample_rate() as f64 / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(AugmentError::InvalidBand {
            low: low_hz,
            high: high_hz,
        });
    }
    let hp = Biquad::highpass(low_hz, clip.sample_rate());
    let lp = Biquad::lowpass(high_hz, clip.sample_rate());
    let mut x = clip.samples().to_vec();
    hp.run(&mut x);
    lp.run(&mut x);
    x.reverse();
    hp.run(&mut x);
    lp.run(&mut x);
    x.reverse();
    Ok(AudioClip::new(x, clip.sample_rate())?)
}

/// RBJ cookbook biquad, Q = 1/sqrt(2).
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn highpass(f0: f64, rate: u32) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / rate as f64;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cw) / 2.0 / a0,
            b1: -(1.0 + cw) / a0,
            b2: (1.0 + cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn lowpass(f0: f64, rate: u32) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / rate as f64;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cw) / 2.0 / a0,
            b1: (1.0 - cw) / a0,
            b2: (1.0 - cw) / 2.0 / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

const PV_FFT: usize = 1024;
const PV_HOP: usize = PV_FFT / 4;

/// Phase-vocoder time stretch: output length `round(len / rate)`, pitch
/// preserved. `rate > 1` shortens, `rate < 1` lengthens.
///
/// Classic analysis/synthesis vocoder: 1024-point periodic-Hann frames,
/// 256-sample synthesis hop, analysis hop `rate * 256`, per-bin
/// instantaneous-frequency phase propagation, windowed overlap-add with
/// window-power normalization.
pub fn time_stretch(clip: &AudioClip, rate: f64) -> Result<AudioClip, AugmentError> {
    if !(0.5..=2.0).contains(&rate) {
        return Err(AugmentError::StretchRateOutOfRange(rate));
    }
    if rate == 1.0 {
        return Ok(clip.clone());
    }

    let x = clip.samples();
    let out_len = (x.len() as f64 / rate).round() as usize;
    if out_len == 0 {
        return Ok(AudioClip::new(Vec::new(), clip.sample_rate())?);
    }

    let window: Vec<f64> = (0..PV_FFT)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / PV_FFT as f64).cos())
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(PV_FFT);
    let ifft = planner.plan_fft_inverse(PV_FFT);

    let n_frames = out_len.div_ceil(PV_HOP) + 1;
    let analysis_hop = rate * PV_HOP as f64;
    let n_bins = PV_FFT / 2 + 1;

    let grab = |pos: isize, buf: &mut [Complex64]| {
        for (i, b) in buf.iter_mut().enumerate() {
            let j = pos + i as isize;
            let v = if j >= 0 && (j as usize) < x.len() {
                x[j as usize] * window[i]
            } else {
                0.0
            };
            *b = Complex64::new(v, 0.0);
        }
    };

    let mut out = vec![0.0; out_len + PV_FFT];
    let mut norm = vec![0.0; out_len + PV_FFT];
    let mut buf = vec![Complex64::new(0.0, 0.0); PV_FFT];
    let mut prev_phase = vec![0.0; n_bins];
    let mut out_phase = vec![0.0; n_bins];
    let mut prev_pos = 0isize;

    for m in 0..n_frames {
        let pos = (m as f64 * analysis_hop).round() as isize;
        grab(pos, &mut buf);
        fft.process(&mut buf);

        let mut spectrum = vec![Complex64::new(0.0, 0.0); PV_FFT];
        for k in 0..n_bins {
            let mag = buf[k].norm();
            let phase = buf[k].arg();
            if m == 0 {
                out_phase[k] = phase;
            } else {
                let delta_pos = (pos - prev_pos) as f64;
                let bin_freq = 2.0 * std::f64::consts::PI * k as f64 / PV_FFT as f64;
                let expected = bin_freq * delta_pos;
                let deviation = wrap_phase(phase - prev_phase[k] - expected);
                let true_freq = bin_freq + deviation / delta_pos;
                out_phase[k] = wrap_phase(out_phase[k] + true_freq * PV_HOP as f64);
            }
            prev_phase[k] = phase;
            spectrum[k] = Complex64::from_polar(mag, out_phase[k]);
        }
        // Real signal: mirror the upper half.
        for k in 1..PV_FFT / 2 {
            spectrum[PV_FFT - k] = spectrum[k].conj();
        }

        ifft.process(&mut spectrum);
        let out_pos = m * PV_HOP;
        for i in 0..PV_FFT {
            let idx = out_pos + i;
            if idx < out.len() {
                out[idx] += spectrum[i].re / PV_FFT as f64 * window[i];
                norm[idx] += window[i] * window[i];
            }
        }
        prev_pos = pos;
    }

    let samples: Vec<f64> = out
        .iter()
        .zip(&norm)
        .take(out_len)
        .map(|(&v, &w)| if w > 1e-9 { v / w } else { 0.0 })
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate())?)
}

fn wrap_phase(p: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = p % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w < -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// Shift pitch by `semitones` while keeping duration: time-stretch by
/// `2^(-semitones/12)`, then a playback-rate change back to the original
/// length (which scales pitch by `2^(semitones/12)`).
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AugmentError> {
    if !semitones.is_finite() || semitones.abs() > 12.0 {
        return Err(AugmentError::PitchOutOfRange(semitones));
    }
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let stretch_rate = 2f64.powf(-semitones / 12.0);
    let stretched = time_stretch(clip, stretch_rate)?;
    let samples = crate::audio::sinc_resample_to_len(stretched.samples(), clip.len());
    Ok(AudioClip::new(samples, clip.sample_rate())?)
}

/// Down-and-up resampling round trip through `via_rate`, back to the
/// original rate and (within one sample) the original length.
pub fn resample_roundtrip(clip: &AudioClip, via_rate: u32) -> Result<AudioClip, AugmentError> {
    let down = resample(clip, via_rate)?;
    Ok(resample(&down, clip.sample_rate())?)
}
