use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::gradcore::ops::{framed_transform_forward, logcosh};
use crate::gradcore::{NodeId, Real, SpectralBasis, Tape, LOGSNR_EPS};
use crate::model::dft_weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LogcoshTime,
    LogcoshSpec,
    Logsnr,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [Self::LogcoshTime, Self::LogcoshSpec, Self::Logsnr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LogcoshTime => "logcosh_time",
            Self::LogcoshSpec => "logcosh_spec",
            Self::Logsnr => "logsnr",
        }
    }

    /// Adds this loss to `tape` on top of the prediction node.
    pub fn record<T: Real>(
        self,
        tape: &mut Tape<'_, T>,
        pred: NodeId,
        target: &[T],
        basis: &Arc<SpectralBasis<T>>,
    ) -> Result<NodeId> {
        match self {
            Self::LogcoshTime => tape.logcosh_loss(pred, target),
            Self::LogcoshSpec => tape.spectral_logcosh_loss(pred, target, Arc::clone(basis)),
            Self::Logsnr => tape.logsnr_loss(pred, target),
        }
    }

    /// Evaluates this loss directly in `f64`.
    pub fn eval(self, pred: &[f32], target: &[f32], fft_size: usize) -> Result<f64> {
        match self {
            Self::LogcoshTime => loss_logcosh_time(pred, target),
            Self::LogcoshSpec => loss_logcosh_spec(pred, target, fft_size),
            Self::Logsnr => loss_logsnr(pred, target),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{s}'")))
    }
}

fn check_lengths<T>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() {
        return shape_err(format!(
            "{} predictions against {} targets",
            pred.len(),
            target.len()
        ));
    }
    Ok(())
}

fn widen<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

/// Mean `ln cosh(pred - target)`.
pub fn loss_logcosh_time<T: Real>(pred: &[T], target: &[T]) -> Result<f64> {
    check_lengths(pred, target)?;
    if pred.is_empty() {
        return shape_err("loss over zero samples");
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| logcosh(p.as_f64() - t.as_f64()))
        .sum();
    Ok(s / pred.len() as f64)
}

/// `-10 log10((Σ target² + ε) / (Σ (pred - target)² + ε))`; lower is better.
pub fn loss_logsnr<T: Real>(pred: &[T], target: &[T]) -> Result<f64> {
    check_lengths(pred, target)?;
    let sig: f64 = target.iter().map(|t| t.as_f64().powi(2)).sum();
    let err: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(-10.0 * ((sig + LOGSNR_EPS) / (err + LOGSNR_EPS)).log10())
}

/// DFT rows for an `fft_size` magnitude spectrogram at hop `fft_size/2`.
pub fn spectral_basis<T: Real>(fft_size: usize) -> Result<SpectralBasis<T>> {
    if !fft_size.is_power_of_two() || fft_size < 4 {
        return invalid(format!("spectral frame {fft_size} must be a power of two >= 4"));
    }
    let (cos, sin) = dft_weights(fft_size)?;
    Ok(SpectralBasis {
        cos,
        sin,
        hop: fft_size / 2,
    })
}

/// Mean log-cosh between the magnitude spectrograms of `pred` and `target`.
pub fn loss_logcosh_spec<T: Real>(pred: &[T], target: &[T], fft_size: usize) -> Result<f64> {
    check_lengths(pred, target)?;
    if fft_size > pred.len() {
        return invalid(format!(
            "spectral frame {fft_size} longer than the {}-sample signal",
            pred.len()
        ));
    }
    let basis = spectral_basis::<f64>(fft_size)?;
    let (p, t) = (widen(pred), widen(target));
    let mags = |x: &[f64]| -> Result<Vec<f64>> {
        let re = framed_transform_forward(x, &basis.cos, basis.hop)?;
        let im = framed_transform_forward(x, &basis.sin, basis.hop)?;
        Ok(re
            .data()
            .iter()
            .zip(im.data())
            .map(|(a, b)| a.hypot(*b))
            .collect())
    };
    let (mp, mt) = (mags(&p)?, mags(&t)?);
    Ok(mp.iter().zip(&mt).map(|(a, b)| logcosh(a - b)).sum::<f64>() / mp.len() as f64)
}
