//! Deterministic digital effects used as ground truth, plus their knob
//! declarations.
//!
//! All oracles are causal pure functions: they start from silent state and
//! process the clip front to back. Internal arithmetic is `f64`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::AudioClip;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectId {
    Comp4c,
    Echo,
    Tremolo,
    Chorus,
}

impl EffectId {
    pub const ALL: [EffectId; 4] = [Self::Comp4c, Self::Echo, Self::Tremolo, Self::Chorus];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Comp4c => "comp4c",
            Self::Echo => "echo",
            Self::Tremolo => "tremolo",
            Self::Chorus => "chorus",
        }
    }
}

impl fmt::Display for EffectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EffectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Self::ALL.iter().map(|id| id.as_str()).collect();
                Error::InvalidArgument(format!(
                    "unknown effect '{s}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// One control of an effect, in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub units: String,
    pub default: f64,
}

impl KnobSpec {
    fn new(name: &str, min: f64, max: f64, units: &str, default: f64) -> Self {
        Self {
            name: name.to_owned(),
            min,
            max,
            units: units.to_owned(),
            default,
        }
    }

    /// Maps a normalized value in [-0.5, 0.5] to physical units.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + (v + 0.5) * (self.max - self.min)
    }

    pub fn normalize(&self, physical: f64) -> f64 {
        (physical - self.min) / (self.max - self.min) - 0.5
    }
}

/// Normalized knob setting, every value in [-0.5, 0.5].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnobVector(Vec<f64>);

impl KnobVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values
            .iter()
            .find(|v| !v.is_finite() || !(-0.5..=0.5).contains(*v))
        {
            return invalid(format!("knob value {bad} outside [-0.5, 0.5]"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

/// An effect together with its knob declarations at a fixed sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectInstance {
    pub effect_id: EffectId,
    pub knob_specs: Vec<KnobSpec>,
    pub sample_rate: u32,
}

/// Tremolo rate range; the chorus range is this divided by
/// [`CHORUS_RATE_DIVISOR`].
const TREMOLO_RATE_HZ: (f64, f64, f64) = (0.5, 50.0, 6.0);

/// Chorus modulation is this many times slower than tremolo.
pub const CHORUS_RATE_DIVISOR: f64 = 8.0;

impl EffectInstance {
    pub fn new(effect_id: EffectId, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        let (lo, hi, def) = TREMOLO_RATE_HZ;
        let knob_specs = match effect_id {
            EffectId::Comp4c => vec![
                KnobSpec::new("threshold", -30.0, 0.0, "dB", -20.0),
                KnobSpec::new("ratio", 1.0, 10.0, "ratio", 4.0),
                KnobSpec::new("attack", 1.0, 100.0, "ms", 10.0),
                KnobSpec::new("release", 10.0, 1000.0, "ms", 100.0),
            ],
            EffectId::Echo => vec![
                KnobSpec::new("delay", 1.0, 500.0, "ms", 250.0),
                KnobSpec::new("feedback", 0.0, 0.9, "fraction", 0.4),
                KnobSpec::new("mix", 0.0, 1.0, "fraction", 0.5),
            ],
            EffectId::Tremolo => vec![
                KnobSpec::new("rate", lo, hi, "Hz", def),
                KnobSpec::new("depth", 0.0, 1.0, "fraction", 0.5),
            ],
            EffectId::Chorus => vec![
                KnobSpec::new(
                    "rate",
                    lo / CHORUS_RATE_DIVISOR,
                    hi / CHORUS_RATE_DIVISOR,
                    "Hz",
                    def / CHORUS_RATE_DIVISOR,
                ),
                KnobSpec::new("depth", 0.0, 5.0, "ms", 2.0),
                KnobSpec::new("center", 5.0, 25.0, "ms", 10.0),
                KnobSpec::new("mix", 0.0, 1.0, "fraction", 0.5),
            ],
        };
        Ok(Self {
            effect_id,
            knob_specs,
            sample_rate,
        })
    }

    pub fn knob_count(&self) -> usize {
        self.knob_specs.len()
    }

    pub fn knob_index(&self, name: &str) -> Option<usize> {
        self.knob_specs.iter().position(|k| k.name == name)
    }

    fn check_knobs(&self, knobs: &KnobVector) -> Result<()> {
        if knobs.len() != self.knob_count() {
            return Err(Error::Incompatible(format!(
                "{} takes {} knobs, got {}",
                self.effect_id,
                self.knob_count(),
                knobs.len()
            )));
        }
        Ok(())
    }

    pub fn denormalize(&self, knobs: &KnobVector) -> Result<Vec<f64>> {
        self.check_knobs(knobs)?;
        Ok(self
            .knob_specs
            .iter()
            .zip(knobs.values())
            .map(|(s, &v)| s.denormalize(v))
            .collect())
    }

    /// Normalizes physical knob values; values outside a knob's range are
    /// rejected.
    pub fn normalize(&self, physical: &[f64]) -> Result<KnobVector> {
        if physical.len() != self.knob_count() {
            return Err(Error::Incompatible(format!(
                "{} takes {} knobs, got {}",
                self.effect_id,
                self.knob_count(),
                physical.len()
            )));
        }
        let mut out = Vec::with_capacity(physical.len());
        for (spec, &p) in self.knob_specs.iter().zip(physical) {
            if !(spec.min..=spec.max).contains(&p) {
                return invalid(format!(
                    "{} = {p} {} outside [{}, {}]",
                    spec.name, spec.units, spec.min, spec.max
                ));
            }
            out.push(spec.normalize(p).clamp(-0.5, 0.5));
        }
        KnobVector::new(out)
    }

    pub fn default_knobs(&self) -> KnobVector {
        let phys: Vec<f64> = self.knob_specs.iter().map(|k| k.default).collect();
        self.normalize(&phys).expect("defaults lie inside their ranges")
    }

    /// Samples of history needed for the oracle state to settle: twice the
    /// longest time constant the effect can have.
    pub fn default_context_len(&self) -> usize {
        let ms = match self.effect_id {
            EffectId::Comp4c | EffectId::Echo => {
                let key = if self.effect_id == EffectId::Comp4c {
                    "release"
                } else {
                    "delay"
                };
                self.knob_specs[self.knob_index(key).unwrap()].max
            }
            EffectId::Chorus => {
                let c = &self.knob_specs[self.knob_index("center").unwrap()];
                let d = &self.knob_specs[self.knob_index("depth").unwrap()];
                c.max + d.max
            }
            // Memoryless apart from the LFO phase, which is locked to the
            // start of the processed span.
            EffectId::Tremolo => 0.0,
        };
        (2.0 * ms_to_samples(ms, self.sample_rate)).ceil() as usize
    }

    /// Denormalizes `knobs` and runs the matching oracle over `x`.
    pub fn apply(&self, knobs: &KnobVector, x: &AudioClip) -> Result<AudioClip> {
        if x.sample_rate != self.sample_rate {
            return Err(Error::Incompatible(format!(
                "clip at {} Hz given to a {} Hz effect",
                x.sample_rate, self.sample_rate
            )));
        }
        let p = self.denormalize(knobs)?;
        match self.effect_id {
            EffectId::Comp4c => compress(x, p[0], p[1], p[2], p[3]),
            EffectId::Echo => echo(x, p[0], p[1], p[2]),
            EffectId::Tremolo => tremolo(x, p[0], p[1]),
            EffectId::Chorus => chorus(x, p[0], p[1], p[2], p[3]),
        }
    }
}

/// Functional form of [`EffectInstance::apply`].
pub fn apply_effect(fx: &EffectInstance, knobs: &KnobVector, x: &AudioClip) -> Result<AudioClip> {
    fx.apply(knobs, x)
}

fn ms_to_samples(ms: f64, sr: u32) -> f64 {
    ms * sr as f64 / 1000.0
}

/// One-pole smoothing coefficient for a time constant in milliseconds.
pub fn smoothing_coefficient(time_ms: f64, sr: u32) -> f64 {
    (-1.0 / ms_to_samples(time_ms, sr)).exp()
}

/// Static gain curve in dB for a detector level `level_db`.
pub fn static_gain_db(level_db: f64, threshold_db: f64, ratio: f64) -> f64 {
    (threshold_db + (level_db - threshold_db) / ratio - level_db).min(0.0)
}

/// Feed-forward peak compressor with separate attack and release smoothing.
pub fn compress(
    x: &AudioClip,
    threshold_db: f64,
    ratio: f64,
    attack_ms: f64,
    release_ms: f64,
) -> Result<AudioClip> {
    if !(ratio >= 1.0) {
        return invalid(format!("compressor ratio {ratio} below 1"));
    }
    if !(attack_ms > 0.0 && release_ms > 0.0) {
        return invalid(format!(
            "compressor time constants must be positive (attack {attack_ms} ms, release {release_ms} ms)"
        ));
    }
    let a_att = smoothing_coefficient(attack_ms, x.sample_rate);
    let a_rel = smoothing_coefficient(release_ms, x.sample_rate);
    let mut env = 0.0f64;
    let samples = x
        .samples
        .iter()
        .map(|&s| {
            let s = s as f64;
            let mag = s.abs();
            let a = if mag > env { a_att } else { a_rel };
            env = a * env + (1.0 - a) * mag;
            let level = 20.0 * env.max(1e-8).log10();
            let gain = static_gain_db(level, threshold_db, ratio);
            (s * 10f64.powf(gain / 20.0)) as f32
        })
        .collect();
    Ok(AudioClip::new(samples, x.sample_rate))
}

/// Feedback delay: `d[n] = x[n-D] + feedback·d[n-D]`, `y = (1-mix)·x + mix·d`.
pub fn echo(x: &AudioClip, delay_ms: f64, feedback: f64, mix: f64) -> Result<AudioClip> {
    if !(0.0..1.0).contains(&feedback) {
        return invalid(format!("echo feedback {feedback} must be in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&mix) {
        return invalid(format!("echo mix {mix} must be in [0, 1]"));
    }
    let delay = ms_to_samples(delay_ms, x.sample_rate).round();
    if !(delay >= 1.0) {
        return invalid(format!("echo delay of {delay_ms} ms is under one sample"));
    }
    let delay = delay as usize;
    let n = x.samples.len();
    let mut wet = vec![0.0f64; n];
    for i in delay..n {
        wet[i] = x.samples[i - delay] as f64 + feedback * wet[i - delay];
    }
    let samples = x
        .samples
        .iter()
        .zip(&wet)
        .map(|(&d, &w)| ((1.0 - mix) * d as f64 + mix * w) as f32)
        .collect();
    Ok(AudioClip::new(samples, x.sample_rate))
}

/// Tremolo gain at sample `n`; equals 1 at `n = 0`.
pub fn tremolo_gain(n: usize, rate_hz: f64, depth: f64, sr: u32) -> f64 {
    let lfo = 0.5 + 0.5 * (2.0 * PI * rate_hz * n as f64 / sr as f64).cos();
    (1.0 - depth) + depth * lfo
}

/// Amplitude modulation by a raised cosine LFO.
pub fn tremolo(x: &AudioClip, rate_hz: f64, depth: f64) -> Result<AudioClip> {
    if !(0.0..=1.0).contains(&depth) {
        return invalid(format!("tremolo depth {depth} must be in [0, 1]"));
    }
    if !(rate_hz > 0.0) {
        return invalid(format!("tremolo rate {rate_hz} Hz must be positive"));
    }
    let samples = x
        .samples
        .iter()
        .enumerate()
        .map(|(n, &s)| (s as f64 * tremolo_gain(n, rate_hz, depth, x.sample_rate)) as f32)
        .collect();
    Ok(AudioClip::new(samples, x.sample_rate))
}

/// Instantaneous chorus delay in samples at sample `n`.
pub fn chorus_delay_samples(n: usize, rate_hz: f64, depth_ms: f64, center_ms: f64, sr: u32) -> f64 {
    let ms = center_ms + depth_ms * (2.0 * PI * rate_hz * n as f64 / sr as f64).sin();
    ms_to_samples(ms, sr)
}

/// Linear interpolation of `x` at fractional index `pos`; indices outside
/// the clip read as silence.
pub fn read_interpolated(x: &[f32], pos: f64) -> f64 {
    let i0 = pos.floor();
    let frac = pos - i0;
    let at = |i: f64| -> f64 {
        if i < 0.0 || i >= x.len() as f64 {
            0.0
        } else {
            x[i as usize] as f64
        }
    };
    let lo = at(i0);
    if frac == 0.0 {
        lo
    } else {
        (1.0 - frac) * lo + frac * at(i0 + 1.0)
    }
}

/// Sinusoidally modulated delay mixed with the dry signal.
pub fn chorus(
    x: &AudioClip,
    rate_hz: f64,
    depth_ms: f64,
    center_ms: f64,
    mix: f64,
) -> Result<AudioClip> {
    if depth_ms < 0.0 || center_ms - depth_ms < 0.0 {
        return invalid(format!(
            "chorus delay {center_ms} ± {depth_ms} ms goes negative"
        ));
    }
    if rate_hz < 0.0 {
        return invalid(format!("chorus rate {rate_hz} Hz must be non-negative"));
    }
    if !(0.0..=1.0).contains(&mix) {
        return invalid(format!("chorus mix {mix} must be in [0, 1]"));
    }
    let sr = x.sample_rate;
    let samples = (0..x.samples.len())
        .map(|n| {
            let d = chorus_delay_samples(n, rate_hz, depth_ms, center_ms, sr).max(0.0);
            let wet = read_interpolated(&x.samples, n as f64 - d);
            ((1.0 - mix) * x.samples[n] as f64 + mix * wet) as f32
        })
        .collect();
    Ok(AudioClip::new(samples, sr))
}
