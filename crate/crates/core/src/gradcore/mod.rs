//! Minimal numerical kernel for the network.
//!
//! Only the handful of operations the model needs are supported, each with a
//! hand-written backward pass. Activations are stored frame-major: a tensor
//! holding per-frame features has one row per frame and one column per
//! feature, so every frame is a contiguous slice.

mod check;
pub mod ops;
mod tape;
mod tensor;

pub use check::{compare_gradients, grad_check, numeric_gradients};
pub use tape::{Gradients, NodeId, Param, ParamId, ParamStore, SpectralBasis, Tape, LOGSNR_EPS};
pub use tensor::Tensor2;

use std::fmt::Debug;
use std::iter::Sum;

/// Floating point element type used by tensors (`f32` for training, `f64`
/// for gradient checks).
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Default
    + Debug
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
