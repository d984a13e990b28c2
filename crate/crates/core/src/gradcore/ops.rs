//! Forward kernels shared by the tape and by direct callers.

use super::{Real, Tensor2};
use crate::error::{invalid, shape_err, Result};

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// `y = W x + b` for a single vector.
pub fn dense_forward<T: Real>(x: &[T], w: &Tensor2<T>, b: &[T]) -> Result<Vec<T>> {
    if x.len() != w.cols() || b.len() != w.rows() {
        return shape_err(format!(
            "dense: x has {} values, W is {}x{}, b has {}",
            x.len(),
            w.rows(),
            w.cols(),
            b.len()
        ));
    }
    Ok((0..w.rows()).map(|i| dot(w.row(i), x) + b[i]).collect())
}

/// Applies the dense map to every row of `x` (one row per frame).
pub fn dense_rows<T: Real>(x: &Tensor2<T>, w: &Tensor2<T>, b: &[T]) -> Result<Tensor2<T>> {
    if x.cols() != w.cols() || b.len() != w.rows() {
        return shape_err(format!(
            "dense: input rows have {} values, W is {}x{}, b has {}",
            x.cols(),
            w.rows(),
            w.cols(),
            b.len()
        ));
    }
    let (frames, out) = (x.rows(), w.rows());
    let mut y = Tensor2::zeros(frames, out);
    // Weight row outermost: each row of W is streamed once per call.
    for i in 0..out {
        let wi = w.row(i);
        for t in 0..frames {
            y.set(t, i, dot(wi, x.row(t)) + b[i]);
        }
    }
    Ok(y)
}

pub fn leaky_relu<T: Real>(x: &[T], slope: T) -> Vec<T> {
    x.iter()
        .map(|&v| if v >= T::zero() { v } else { slope * v })
        .collect()
}

/// Number of frames of size `frame` at stride `hop` that fit in `len` samples.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> Option<usize> {
    if hop == 0 || frame == 0 || len < frame {
        None
    } else {
        Some((len - frame) / hop + 1)
    }
}

/// Strided per-frame linear map: row `t` of the result is `W · signal[t·hop .. t·hop+N]`
/// where `N = W.cols()`.
pub fn framed_transform_forward<T: Real>(
    signal: &[T],
    w: &Tensor2<T>,
    hop: usize,
) -> Result<Tensor2<T>> {
    if hop == 0 {
        return invalid("hop must be at least 1");
    }
    let n = w.cols();
    let Some(frames) = frame_count(signal.len(), n, hop) else {
        return shape_err(format!(
            "signal of {} samples is shorter than one {n}-sample frame",
            signal.len()
        ));
    };
    let mut out = Tensor2::zeros(frames, w.rows());
    for k in 0..w.rows() {
        let wk = w.row(k);
        for t in 0..frames {
            out.set(t, k, dot(wk, &signal[t * hop..t * hop + n]));
        }
    }
    Ok(out)
}

/// Per-sample count of frames covering each output position.
pub fn overlap_counts<T: Real>(frames: usize, frame: usize, hop: usize) -> Vec<T> {
    let len = if frames == 0 { 0 } else { (frames - 1) * hop + frame };
    let mut counts = vec![T::zero(); len];
    for t in 0..frames {
        for c in &mut counts[t * hop..t * hop + frame] {
            *c += T::one();
        }
    }
    counts
}

/// Maps each frame (row of `frames`) through `W` (`N × features`) to an
/// `N`-sample segment, adds it at offset `t·hop` and divides every output
/// sample by the number of segments covering it. Uncovered samples stay 0.
pub fn overlap_add_synthesis<T: Real>(
    frames: &Tensor2<T>,
    w: &Tensor2<T>,
    hop: usize,
) -> Result<Vec<T>> {
    if hop == 0 {
        return invalid("hop must be at least 1");
    }
    if w.cols() != frames.cols() {
        return shape_err(format!(
            "synthesis: frames carry {} features but W is {}x{}",
            frames.cols(),
            w.rows(),
            w.cols()
        ));
    }
    if frames.rows() == 0 {
        return shape_err("synthesis needs at least one frame");
    }
    let n = w.rows();
    let counts: Vec<T> = overlap_counts(frames.rows(), n, hop);
    let mut out = vec![T::zero(); counts.len()];
    for t in 0..frames.rows() {
        let f = frames.row(t);
        let seg = &mut out[t * hop..t * hop + n];
        for (i, s) in seg.iter_mut().enumerate() {
            *s += dot(w.row(i), f);
        }
    }
    for (o, &c) in out.iter_mut().zip(&counts) {
        if c > T::zero() {
            *o /= c;
        }
    }
    Ok(out)
}

/// Overflow-safe `ln(cosh(d))`.
#[inline]
/// `ln cosh d` without overflow. Small arguments go through
/// `½·ln(1 + sinh²d)` to avoid cancellation against `ln 2`.
pub fn logcosh<T: Real>(d: T) -> T {
    let a = d.abs();
    if a < T::one() {
        let s = a.sinh();
        T::lit(0.5) * (s * s).ln_1p()
    } else {
        a + (T::lit(-2.0) * a).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
    }
}
