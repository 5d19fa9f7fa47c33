//! Shared helpers for unit tests: signal synthesis and spectral peak
//! measurement. Test-only; not part of the public API.

use crate::audio::AudioClip;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Pure sine at `freq` Hz.
pub fn sine(freq: f64, rate: u32, seconds: f64, amplitude: f64) -> AudioClip {
    let n = (seconds * rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
        .collect();
    AudioClip::new(samples, rate).unwrap()
}

/// Magnitude spectrum of the whole clip (rectangular window).
pub fn magnitude_spectrum(clip: &AudioClip) -> Vec<f64> {
    let n = clip.len();
    let mut buf: Vec<Complex64> = clip
        .samples()
        .iter()
        .map(|&s| Complex64::new(s, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().take(n / 2 + 1).map(|c| c.norm()).collect()
}

/// Frequency (Hz) of the strongest DFT bin, ignoring DC.
pub fn dominant_hz(clip: &AudioClip) -> f64 {
    let mags = magnitude_spectrum(clip);
    let bin = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    bin as f64 * clip.sample_rate() as f64 / clip.len() as f64
}

/// Hz-per-bin resolution of `dominant_hz` for this clip.
pub fn bin_hz(clip: &AudioClip) -> f64 {
    clip.sample_rate() as f64 / clip.len() as f64
}
