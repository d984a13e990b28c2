use super::AudioClip;
use crate::error::{invalid, Result};

/// Zero crossings of the interpolation kernel on each side, measured at the
/// lower of the two rates.
const HALF_TAPS: f64 = 16.0;
const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc resampling. The output has
/// `round(len · target_sr / sr)` samples; samples outside the clip read as
/// silence.
pub fn resample(clip: &AudioClip, target_sr: u32) -> Result<AudioClip> {
    if target_sr == 0 {
        return invalid("target sample rate must be positive");
    }
    if clip.sample_rate == 0 {
        return invalid("clip has a zero sample rate");
    }
    if target_sr == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_sr as f64 / clip.sample_rate as f64;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    let x = &clip.samples;

    let samples = (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = (t - half_width).ceil() as i64;
            let hi = (t + half_width).floor() as i64;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for k in lo..=hi {
                let d = t - k as f64;
                let w = cutoff * sinc(cutoff * d) * kaiser(d / half_width);
                norm += w;
                if k >= 0 && (k as usize) < x.len() {
                    acc += w * x[k as usize] as f64;
                }
            }
            (acc / norm) as f32
        })
        .collect();
    Ok(AudioClip::new(samples, target_sr))
}
