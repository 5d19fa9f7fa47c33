//! STFT and mel filterbank.

use super::{AudioClip, AudioError, FeatureConfig, MelSpec};
use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::io::Write;
use std::path::Path;

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x (fft_size/2 + 1)`.
///
/// Band edges are spaced linearly in mel between `mel(fmin)` and
/// `mel(fmax)`; triangles peak at 1 (no area normalization). Errors if any
/// filter covers no FFT bin.
pub fn mel_matrix(cfg: &FeatureConfig) -> Result<Array2<f64>, AudioError> {
    cfg.validate()?;
    let n_fft = cfg.fft_len();
    let n_bins = n_fft / 2 + 1;
    let hz_per_bin = cfg.sample_rate as f64 / n_fft as f64;

    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax_hz());
    let edges_hz: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|j| mel_to_hz(mel_lo + (mel_hi - mel_lo) * j as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut m = Array2::<f64>::zeros((cfg.n_mels, n_bins));
    for row in 0..cfg.n_mels {
        let (left, center, right) = (edges_hz[row], edges_hz[row + 1], edges_hz[row + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * hz_per_bin;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                m[[row, k]] = w;
                any = true;
            }
        }
        if !any {
            return Err(AudioError::EmptyMelFilter { index: row });
        }
    }
    Ok(m)
}

/// Periodic Hann window of length `n`.
fn hann_window(n: usize) -> Array1<f64> {
    Array1::from_iter(
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()),
    )
}

/// Log-mel spectrogram of a clip.
///
/// Frames of `window_ms` every `hop_ms`, periodic Hann window, zero-padded
/// FFT, magnitude-squared spectrum, mel projection, then
/// `ln(max(x, log_floor))`. The clip must already be at the config rate.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<MelSpec, AudioError> {
    cfg.validate()?;
    if clip.sample_rate() != cfg.sample_rate {
        return Err(AudioError::SampleRateMismatch {
            clip: clip.sample_rate(),
            config: cfg.sample_rate,
        });
    }
    let window = cfg.window_samples();
    if clip.len() < window {
        return Err(AudioError::ClipTooShort {
            samples: clip.len(),
            window,
        });
    }

    let hop = cfg.hop_samples();
    let n_fft = cfg.fft_len();
    let n_bins = n_fft / 2 + 1;
    let n_frames = cfg.frames_for(clip.len());
    let mel = mel_matrix(cfg)?;
    let win = hann_window(window);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);

    let x = clip.samples();
    let mut power = Array2::<f64>::zeros((n_bins, n_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for frame in 0..n_frames {
        let start = frame * hop;
        for i in 0..n_fft {
            let v = if i < window { x[start + i] * win[i] } else { 0.0 };
            buf[i] = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            power[[k, frame]] = c.norm_sqr();
        }
    }

    let floor = cfg.log_floor;
    let values = mel.dot(&power).mapv(|v| v.max(floor).ln());
    Ok(MelSpec {
        values,
        config: cfg.clone(),
    })
}

/// Write a spectrogram as CSV: one line per mel band, frames as columns.
pub fn write_mel_csv(path: &Path, spec: &MelSpec) -> Result<(), std::io::Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in spec.values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::sine;

    /// Brute-force filterbank built straight from the mel formula, kept
    /// independent of `mel_matrix` (per-cell evaluation, mel-domain math).
    fn oracle_mel_matrix(cfg: &FeatureConfig) -> Array2<f64> {
        let n_bins = cfg.fft_len() / 2 + 1;
        let lo = 2595.0 * (1.0 + cfg.fmin / 700.0).log10();
        let hi = 2595.0 * (1.0 + cfg.fmax_hz() / 700.0).log10();
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        Array2::from_shape_fn((cfg.n_mels, n_bins), |(m, k)| {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_len() as f64;
            let mel_f = 2595.0 * (1.0 + f / 700.0).log10();
            let left = lo + step * m as f64;
            let center = left + step;
            let right = center + step;
            // Triangle in Hz with vertices at the edge frequencies.
            let (lhz, chz, rhz) = (
                700.0 * (10f64.powf(left / 2595.0) - 1.0),
                700.0 * (10f64.powf(center / 2595.0) - 1.0),
                700.0 * (10f64.powf(right / 2595.0) - 1.0),
            );
            let _ = mel_f;
            if f <= lhz || f >= rhz {
                0.0
            } else if f <= chz {
                (f - lhz) / (chz - lhz)
            } else {
                (rhz - f) / (rhz - chz)
            }
        })
    }

    /// Single-frame log-mel by direct DFT summation; the quadrature oracle.
    fn oracle_single_frame(frame: &[f64], cfg: &FeatureConfig) -> Vec<f64> {
        let n_fft = cfg.fft_len();
        let n_bins = n_fft / 2 + 1;
        let win: Vec<f64> = (0..frame.len())
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame.len() as f64).cos())
            .collect();
        let mut power = vec![0.0; n_bins];
        for (k, p) in power.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &x) in frame.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * n as f64 / n_fft as f64;
                let v = x * win[n];
                re += v * phase.cos();
                im += v * phase.sin();
            }
            *p = re * re + im * im;
        }
        let mel = oracle_mel_matrix(cfg);
        (0..cfg.n_mels)
            .map(|m| {
                let e: f64 = (0..n_bins).map(|k| mel[[m, k]] * power[k]).sum();
                e.max(cfg.log_floor).ln()
            })
            .collect()
    }

    #[test]
    fn matrix_matches_brute_force_oracle() {
        let cfg = FeatureConfig::default();
        let m = mel_matrix(&cfg).unwrap();
        let o = oracle_mel_matrix(&cfg);
        let max_diff = (&m - &o).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_diff <= 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn rows_are_nonnegative_with_positive_sums() {
        let m = mel_matrix(&FeatureConfig::default()).unwrap();
        for (i, row) in m.rows().into_iter().enumerate() {
            assert!(row.iter().all(|&v| v >= 0.0), "negative weight in row {i}");
            assert!(row.sum() > 0.0, "row {i} sums to zero");
        }
    }

    #[test]
    fn adjacent_filter_bands_overlap() {
        // The continuous filters always overlap: row m peaks where row m+1
        // starts rising. At bin level that needs enough FFT resolution for
        // the narrow low-frequency triangles, so check bins at fft 4096.
        let cfg = FeatureConfig {
            fft_size: Some(4096),
            ..FeatureConfig::default()
        };
        let m = mel_matrix(&cfg).unwrap();
        for i in 0..m.nrows() - 1 {
            let overlap = (0..m.ncols()).any(|k| m[[i, k]] > 0.0 && m[[i + 1, k]] > 0.0);
            assert!(overlap, "rows {i} and {} share no bin", i + 1);
        }
    }

    #[test]
    fn too_many_mels_for_fft_resolution_errors() {
        let cfg = FeatureConfig {
            n_mels: 2048,
            fft_size: Some(512),
            ..FeatureConfig::default()
        };
        match mel_matrix(&cfg) {
            Err(AudioError::EmptyMelFilter { .. }) => {}
            other => panic!("expected empty-filter error, got {other:?}"),
        }
    }

    #[test]
    fn five_second_clip_gives_80_by_498() {
        let clip = sine(440.0, 16_000, 5.0, 0.5);
        let spec = log_mel(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(spec.values.shape(), &[80, 498]);
    }

    #[test]
    fn silence_maps_to_log_floor_everywhere() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
        let cfg = FeatureConfig::default();
        let spec = log_mel(&clip, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(spec.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn single_frame_matches_naive_dft_oracle() {
        let cfg = FeatureConfig::default();
        let clip = sine(523.25, 16_000, 0.025, 0.7);
        assert_eq!(clip.len(), cfg.window_samples());
        let spec = log_mel(&clip, &cfg).unwrap();
        assert_eq!(spec.n_frames(), 1);
        let oracle = oracle_single_frame(clip.samples(), &cfg);
        for (m, &got) in spec.values.column(0).iter().enumerate() {
            let want = oracle[m];
            let rel = (got - want).abs() / want.abs().max(1e-12);
            assert!(rel <= 1e-5, "band {m}: got {got}, oracle {want}, rel {rel}");
        }
    }

    #[test]
    fn appending_less_than_one_hop_of_zeros_is_invisible() {
        // Exact form of the invariant: with (len - window) a multiple of
        // hop, anything short of one extra hop cannot start a new frame.
        let cfg = FeatureConfig::default();
        let len = cfg.window_samples() + 97 * cfg.hop_samples();
        let full = sine(440.0, 16_000, 2.0, 0.5);
        let clip = AudioClip::new(full.samples()[..len].to_vec(), 16_000).unwrap();
        let spec = log_mel(&clip, &cfg).unwrap();
        for extra in [1, cfg.hop_samples() / 2, cfg.hop_samples() - 1] {
            let mut samples = clip.samples().to_vec();
            samples.extend(std::iter::repeat(0.0).take(extra));
            let padded = AudioClip::new(samples, 16_000).unwrap();
            let spec2 = log_mel(&padded, &cfg).unwrap();
            assert_eq!(spec.values, spec2.values, "changed after +{extra} zeros");
        }
    }

    #[test]
    fn rate_mismatch_and_short_clip_error() {
        let cfg = FeatureConfig::default();
        let wrong_rate = sine(440.0, 8_000, 1.0, 0.5);
        assert!(matches!(
            log_mel(&wrong_rate, &cfg),
            Err(AudioError::SampleRateMismatch { .. })
        ));
        let short = AudioClip::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(
            log_mel(&short, &cfg),
            Err(AudioError::ClipTooShort { .. })
        ));
    }

    #[test]
    fn sine_energy_lands_in_the_right_band() {
        let cfg = FeatureConfig::default();
        let clip = sine(1000.0, 16_000, 1.0, 0.8);
        let spec = log_mel(&clip, &cfg).unwrap();
        let mid = spec.n_frames() / 2;
        let band = spec
            .values
            .column(mid)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        // Band whose filter peaks nearest 1 kHz.
        let m = mel_matrix(&cfg).unwrap();
        let hz_per_bin = 16_000.0 / cfg.fft_len() as f64;
        let expect = (0..cfg.n_mels)
            .max_by(|&a, &b| {
                let peak = |r: usize| {
                    m.row(r)
                        .iter()
                        .enumerate()
                        .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                        .map(|(k, _)| {
                            -((k as f64 * hz_per_bin - 1000.0).abs())
                        })
                        .unwrap()
                };
                peak(a).partial_cmp(&peak(b)).unwrap()
            })
            .unwrap();
        assert!(
            (band as i64 - expect as i64).abs() <= 1,
            "dominant band {band}, expected near {expect}"
        );
    }
}
