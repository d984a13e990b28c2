use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::gradcore::{Gradients, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            params
                .iter()
                .map(|(_, p)| vec![T::zero(); p.value.len()])
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Frozen tensors are skipped entirely,
/// moments included.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return shape_err("optimizer state, gradients and parameters disagree");
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (id, p) in params.iter_mut() {
        if p.frozen {
            continue;
        }
        let g = grads.get(id);
        if g.shape() != p.value.shape() {
            return shape_err(format!(
                "gradient {:?} for {} {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            ));
        }
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for (((w, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
