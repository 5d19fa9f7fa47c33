//! RIFF WAV reader/writer.
//!
//! Reading accepts PCM 16-bit and IEEE float 32-bit, mono or stereo. Stereo
//! is averaged to mono, integer samples are scaled to `[-1, 1]` by 1/32768.
//! Writing always produces mono PCM 16-bit.

use super::{AudioClip, AudioError};
use std::path::Path;

pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let map_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => AudioError::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::FormatError(detail) => AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "unsupported WAV feature".to_string(),
        },
        other => AudioError::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    };

    let mut reader = hound::WavReader::open(path).map_err(map_err)?;
    let spec = reader.spec();

    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{} channels; need mono or stereo", spec.channels),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {fmt:?}; need 16-bit PCM or 32-bit float"),
            })
        }
    };

    let samples = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) / 2.0)
            .collect()
    } else {
        interleaved
    };

    AudioClip::new(samples, spec.sample_rate)
}

/// Write a clip as mono 16-bit PCM, clamping and rounding samples.
pub fn save_wav(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fail = |e: hound::Error| AudioError::WriteFailed {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(fail)?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(fail)?;
    }
    writer.finalize().map_err(fail)
}
