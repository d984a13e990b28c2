use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

/// Sample encodings supported for writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, message: impl ToString) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Reads a PCM16 or float32 RIFF/WAVE file. Stereo is averaged to mono and
/// PCM16 is scaled by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(wav_err(path, format!("{channels} channels; only mono and stereo are supported")));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?} {bits}-bit (expected PCM16 or float32)"),
            ))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

fn quantize(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono WAV file. Samples are clamped to [-1, 1] for PCM16.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (bits, format) = match depth {
        BitDepth::Pcm16 => (16, hound::SampleFormat::Int),
        BitDepth::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        let r = match depth {
            BitDepth::Pcm16 => writer.write_sample(quantize(s)),
            BitDepth::Float32 => writer.write_sample(s),
        };
        r.map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
