//! Band-limited sample-rate conversion.
//!
//! Windowed-sinc interpolation: a Hann-windowed sinc kernel with 32 zero
//! crossings per side, cut off at 95% of the narrower Nyquist, with
//! per-output-sample kernel normalization for a flat passband. Out-of-range
//! input is treated as silence.

use super::{AudioClip, AudioError};

/// Zero crossings of the sinc on each side of the kernel center.
const ZERO_CROSSINGS: f64 = 32.0;

/// Resample to `target_rate`, preserving duration within one output sample.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate() as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    let out = sinc_resample(clip.samples(), ratio, out_len);
    AudioClip::new(out, target_rate)
}

/// Stretch or squeeze a signal to exactly `out_len` samples with the same
/// windowed-sinc kernel (a pure playback-rate change: pitch scales by
/// `len / out_len`).
pub(crate) fn sinc_resample_to_len(x: &[f64], out_len: usize) -> Vec<f64> {
    let ratio = out_len as f64 / x.len() as f64;
    sinc_resample(x, ratio, out_len)
}

fn sinc_resample(x: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    // Cutoff in cycles per *input* sample; the kernel widens when
    // downsampling so stopband rejection is kept.
    let fc = 0.475 * ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * fc);

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let lo = (center - half_width).ceil() as isize;
        let hi = (center + half_width).floor() as isize;
        let mut acc = 0.0;
        let mut norm = 0.0;
        for j in lo..=hi {
            let t = j as f64 - center;
            let w = hann(t / half_width) * sinc(2.0 * fc * t);
            norm += w;
            if j >= 0 && (j as usize) < x.len() {
                acc += w * x[j as usize];
            }
        }
        out.push(if norm != 0.0 { acc / norm } else { 0.0 });
    }
    out
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

/// Hann window on `[-1, 1]`.
fn hann(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}
