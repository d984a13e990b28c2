//! Profiling of knob-controlled audio effects with a waveform-domain network.
//!
//! The crate is split along the pipeline:
//!
//! - [`gradcore`]: tensors, a define-by-run tape with hand-written backward
//!   passes, and a finite-difference gradient checker.
//! - [`effects`]: deterministic digital effects (compressor, echo, tremolo,
//!   chorus) with declared knob ranges, used as ground truth.
//! - [`model`]: the learnable-transform encoder/decoder network, conditioned
//!   on the effect's knob vector, and its checkpoint format.
//! - [`dataset`]: WAV IO, resampling, synthetic corpora and deterministic
//!   chunk-pair manifests.
//! - [`trainer`]: losses, Adam, the one-cycle schedule, the training loop and
//!   evaluation with waveform exports.

pub mod dataset;
pub mod effects;
pub mod error;
pub mod gradcore;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
