//! Synthetic corpora standing in for recorded material.
//!
//! `Tones` files hold one plucked note at a time (single-instrument
//! material); `Mix` files layer several voices, a bass line and noise
//! percussion (broadband, full-band material).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_wav, AudioClip, BitDepth};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Tones,
    Mix,
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 20.0)
}

/// Adds a decaying harmonic note starting at `start` into `out`.
fn pluck(out: &mut [f64], sr: f64, start: usize, len: usize, f0: f64, amp: f64, decay_s: f64) {
    let attack = (0.004 * sr) as usize;
    let end = (start + len).min(out.len());
    for (i, o) in out[start..end].iter_mut().enumerate() {
        let t = i as f64 / sr;
        let env = if i < attack {
            i as f64 / attack as f64
        } else {
            (-t / decay_s).exp()
        };
        let mut v = 0.0;
        for h in 1..=6 {
            let fh = f0 * h as f64;
            if fh >= sr * 0.45 {
                break;
            }
            v += (2.0 * PI * fh * t).sin() * (-(h as f64 - 1.0) * t / decay_s).exp() / h as f64;
        }
        // Release the last 5 ms to avoid clicks at the next onset.
        let tail = end - start - i;
        let fade = (tail as f64 / (0.005 * sr)).min(1.0);
        *o += amp * env * fade * v * 0.4;
    }
}

/// One note at a time with random pitch, level and decay.
pub fn tone_clip(seed: u64, sample_rate: u32, seconds: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (seconds * sr) as usize;
    let mut out = vec![0.0f64; n];
    let mut pos = (rng.gen_range(0.0..0.05) * sr) as usize;
    while pos < n {
        let len = (rng.gen_range(0.35..1.2) * sr) as usize;
        let f0 = 82.4 * 2f64.powf(rng.gen_range(0.0..36.0) / 12.0);
        let amp = db(rng.gen_range(-6.0..6.0));
        pluck(&mut out, sr, pos, len, f0, amp, rng.gen_range(0.2..1.0));
        pos += len;
    }
    // Loud low notes can stack past full scale; pull those clips down.
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.9 { 0.9 / peak } else { 1.0 };
    AudioClip::new(out.into_iter().map(|v| (v * scale) as f32).collect(), sample_rate)
}

/// Several overlapping voices, bass and noise percussion with slow level
/// automation.
pub fn mix_clip(seed: u64, sample_rate: u32, seconds: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (seconds * sr) as usize;
    let mut out = vec![0.0f64; n];

    for voice in 0..3 {
        let mut pos = (rng.gen_range(0.0..0.3) * sr) as usize;
        while pos < n {
            let len = (rng.gen_range(0.2..0.8) * sr) as usize;
            let f0 = 196.0 * 2f64.powf((rng.gen_range(0.0..24.0) + 5.0 * voice as f64) / 12.0);
            pluck(&mut out, sr, pos, len, f0, db(rng.gen_range(-24.0..-8.0)), rng.gen_range(0.15..0.6));
            pos += len;
        }
    }
    let beat = (rng.gen_range(0.2..0.35) * sr) as usize;
    let mut pos = 0;
    while pos < n {
        let f0 = 41.2 * 2f64.powf(rng.gen_range(0.0..12.0) / 12.0);
        pluck(&mut out, sr, pos, 2 * beat, f0, db(rng.gen_range(-14.0..-6.0)), 0.4);
        pos += 2 * beat;
    }
    // Noise hits: a low-passed thump on even beats and a bright tick on all.
    let mut lp = 0.0;
    let mut hp_prev = 0.0;
    for i in 0..n {
        let phase = i % beat;
        let t = phase as f64 / sr;
        let noise: f64 = rng.gen_range(-1.0..1.0);
        lp += 0.08 * (noise - lp);
        let kick = if (i / beat) % 2 == 0 {
            1.2 * lp * (-t / 0.06).exp()
        } else {
            0.0
        };
        let hp = noise - hp_prev;
        hp_prev = noise;
        let tick = 0.08 * hp * (-t / 0.015).exp();
        out[i] += kick + tick;
    }
    let swell_rate = rng.gen_range(0.1..0.4);
    let swell_phase = rng.gen_range(0.0..2.0 * PI);
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        *o *= db(-9.0 + 8.0 * (2.0 * PI * swell_rate * t + swell_phase).sin());
    }
    // Level to a random RMS and soft-limit the peaks, like a mastered mix.
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    let scale = if rms > 0.0 { db(rng.gen_range(-14.0..-8.0)) / rms } else { 1.0 };
    AudioClip::new(
        out.into_iter()
            .map(|v| (0.98 * (v * scale / 0.98).tanh()) as f32)
            .collect(),
        sample_rate,
    )
}

/// Writes `n_files` PCM16 files named `<kind>_NNN.wav` into `dir`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    kind: CorpusKind,
    n_files: usize,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let prefix = match kind {
        CorpusKind::Tones => "tones",
        CorpusKind::Mix => "mix",
    };
    (0..n_files)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let clip = match kind {
                CorpusKind::Tones => tone_clip(s, sample_rate, seconds),
                CorpusKind::Mix => mix_clip(s, sample_rate, seconds),
            };
            let path = dir.join(format!("{prefix}_{i:03}.wav"));
            save_wav(&clip, &path, BitDepth::Pcm16)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_bounded() {
        for f in [tone_clip, mix_clip] {
            let a = f(3, 44100, 1.5);
            let b = f(3, 44100, 1.5);
            assert_eq!(a, b);
            assert_eq!(a.len(), 66150);
            assert!(a.peak() <= 1.0 && a.peak() > 0.0);
            assert_ne!(f(4, 44100, 1.5), a);
        }
    }
}
