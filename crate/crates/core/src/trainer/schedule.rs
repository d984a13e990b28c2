use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// One-cycle schedule: linear warm-up from `lr_max/div` to `lr_max` over the
/// first `pct_up` of the run, then cosine annealing down to
/// `lr_max/(div·final_div)`.
pub fn onecycle_lr(
    step: usize,
    total_steps: usize,
    lr_max: f64,
    pct_up: f64,
    div: f64,
    final_div: f64,
) -> f64 {
    let start = lr_max / div;
    let end = start / final_div;
    if total_steps == 0 {
        return start;
    }
    let s = step.min(total_steps) as f64;
    let peak = pct_up * total_steps as f64;
    // Blend as a·(1−t) + b·t so both ends of each segment come out exact.
    let blend = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
    if s <= peak {
        blend(start, lr_max, s / peak)
    } else {
        let p = (s - peak) / (total_steps as f64 - peak);
        blend(end, lr_max, 0.5 * (1.0 + (PI * p).cos()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub lr_max: f64,
    pub pct_up: f64,
    pub div: f64,
    pub final_div: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            pct_up: 0.3,
            div: 25.0,
            final_div: 1e4,
        }
    }
}

impl OneCycle {
    pub fn lr(&self, step: usize, total_steps: usize) -> f64 {
        onecycle_lr(step, total_steps, self.lr_max, self.pct_up, self.div, self.final_div)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let s = OneCycle {
            lr_max: 0.01,
            ..OneCycle::default()
        };
        assert_eq!(s.lr(0, 1000), 0.01 / 25.0);
        assert_eq!(s.lr(300, 1000), 0.01);
        assert_eq!(s.lr(1000, 1000), 0.01 / 25.0 / 1e4);
        // Half way up the ramp is the mean of start and peak.
        let mid = s.lr(150, 1000);
        assert!((mid - 0.5 * (0.01 / 25.0 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn single_maximum_and_continuity() {
        let s = OneCycle::default();
        let total = 997;
        let lrs: Vec<f64> = (0..=total).map(|i| s.lr(i, total)).collect();
        let max = lrs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(lrs.iter().filter(|&&v| v == max).count(), 1);
        for w in lrs.windows(2) {
            assert!((w[1] - w[0]).abs() < 2.0 * s.lr_max / 290.0);
        }
    }
}
