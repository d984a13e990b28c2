use super::{Gradients, NodeId, ParamStore, Tape};
use crate::error::{invalid, Result};

/// Central-difference gradients of the scalar built by `build`, for every
/// unfrozen parameter. Frozen parameters are left at zero.
///
/// Uses the symmetric five-point stencil
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, whose truncation
/// error is O(h⁴), so a step near the top of the allowed range keeps both
/// rounding and curvature error small.
pub fn numeric_gradients<F>(params: &ParamStore<f64>, eps: f64, build: F) -> Result<Gradients<f64>>
where
    F: for<'a> Fn(&mut Tape<'a, f64>) -> Result<NodeId>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let out = build(&mut tape)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return invalid(format!("gradient check needs a scalar, got {:?}", v.shape()));
        }
        Ok(v.data()[0])
    };

    let mut work = params.clone();
    let mut numeric = Gradients::zeros_like(params);
    let ids: Vec<_> = params.iter().map(|(id, p)| (id, p.frozen, p.value.len())).collect();
    for (id, frozen, len) in ids {
        if frozen {
            continue;
        }
        for k in 0..len {
            let orig = work.value(id).data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).value.data_mut()[k] = orig + offset;
                eval(&work)
            };
            let (p1, m1) = (at(eps)?, at(-eps)?);
            let (p2, m2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
            work.get_mut(id).value.data_mut()[k] = orig;
            numeric.get_mut(id).data_mut()[k] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        }
    }
    Ok(numeric)
}

/// Largest relative disagreement `|a - c| / max(|a|, |c|, 1e-12)` over the
/// unfrozen entries. An empty parameter set yields 0.
pub fn compare_gradients(
    params: &ParamStore<f64>,
    analytic: &Gradients<f64>,
    numeric: &Gradients<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for (id, p) in params.iter() {
        if p.frozen {
            continue;
        }
        for (&a, &c) in analytic.get(id).data().iter().zip(numeric.get(id).data()) {
            let denom = a.abs().max(c.abs()).max(1e-12);
            worst = worst.max((a - c).abs() / denom);
        }
    }
    worst
}

/// Compares the tape's backward pass against central differences and returns
/// the worst relative error over all unfrozen parameters.
pub fn grad_check<F>(params: &ParamStore<f64>, eps: f64, build: F) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a, f64>) -> Result<NodeId>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return invalid(format!("finite-difference step {eps} outside [1e-7, 1e-4]"));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        build(&mut tape)?;
        tape.backward(1.0)?
    };
    let numeric = numeric_gradients(params, eps, &build)?;
    Ok(compare_gradients(params, &analytic, &numeric))
}
