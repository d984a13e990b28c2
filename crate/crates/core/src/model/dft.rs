use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::gradcore::{Real, Tensor2};

/// Real and imaginary DFT analysis rows for `k = 0..=N/2`:
/// `cos[k][n] = cos(2πkn/N)`, `sin[k][n] = -sin(2πkn/N)`.
pub fn dft_weights<T: Real>(frame_size: usize) -> Result<(Tensor2<T>, Tensor2<T>)> {
    if frame_size < 4 || frame_size % 2 != 0 {
        return invalid(format!("DFT frame size {frame_size} must be even and at least 4"));
    }
    let bins = frame_size / 2 + 1;
    let angle = |k: usize, n: usize| 2.0 * PI * ((k * n) % frame_size) as f64 / frame_size as f64;
    let cos = Tensor2::from_fn(bins, frame_size, |k, n| T::lit(angle(k, n).cos()));
    let sin = Tensor2::from_fn(bins, frame_size, |k, n| T::lit(-angle(k, n).sin()));
    Ok((cos, sin))
}

/// Synthesis matrix (`N × 2(N/2+1)`) that exactly inverts the stacked
/// analysis pair from [`dft_weights`]: the first half of the columns take
/// real parts, the second half imaginary parts.
pub fn inverse_dft_weights<T: Real>(frame_size: usize) -> Result<Tensor2<T>> {
    if frame_size < 4 || frame_size % 2 != 0 {
        return invalid(format!("DFT frame size {frame_size} must be even and at least 4"));
    }
    let n_f = frame_size as f64;
    let bins = frame_size / 2 + 1;
    Ok(Tensor2::from_fn(frame_size, 2 * bins, |n, c| {
        let k = c % bins;
        let weight = if k == 0 || k == frame_size / 2 { 1.0 } else { 2.0 };
        let a = 2.0 * PI * ((k * n) % frame_size) as f64 / n_f;
        let v = if c < bins { a.cos() } else { -a.sin() };
        T::lit(weight * v / n_f)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_rows() {
        let (c, s) = dft_weights::<f64>(4).unwrap();
        assert_eq!(c.shape(), (3, 4));
        assert_eq!(c.row(0), &[1.0, 1.0, 1.0, 1.0]);
        let expected = [1.0, 0.0, -1.0, 0.0];
        for (a, b) in c.row(1).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(s.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_or_tiny_sizes_rejected() {
        assert!(dft_weights::<f32>(7).is_err());
        assert!(dft_weights::<f32>(2).is_err());
        assert!(inverse_dft_weights::<f32>(9).is_err());
    }

    #[test]
    fn synthesis_inverts_analysis() {
        for n in [4usize, 16, 64] {
            let (c, s) = dft_weights::<f64>(n).unwrap();
            let inv = inverse_dft_weights::<f64>(n).unwrap();
            let bins = n / 2 + 1;
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..bins)
                        .map(|k| inv.get(i, k) * c.get(k, j) + inv.get(i, bins + k) * s.get(k, j))
                        .sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expected).abs() < 1e-12, "n={n} ({i},{j}) = {v}");
                }
            }
        }
    }
}
