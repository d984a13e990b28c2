//! Losses, optimizer, learning-rate schedule, training loop and evaluation.

mod adam;
mod eval;
mod train;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use eval::{evaluate, evaluate_pairs, Metrics};
pub use train::{
    fit, train, LossLog, LossRecord, TrainConfig, TrainOptions, TrainOutcome, LOG_HEADER,
};
pub use loss::{
    loss_logcosh_spec, loss_logcosh_time, loss_logsnr, spectral_basis, LossKind,
};
pub use schedule::{onecycle_lr, OneCycle};
