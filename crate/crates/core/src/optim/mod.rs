//! Parameter updates: SGD and Adam, norm-based gradient clipping, the
//! Lookahead wrapper and learning-rate schedules.

mod clip;
mod lookahead;
mod optimizer;
mod schedule;

pub use clip::{clip_grad_norm, clip_store_grad_norm, global_norm};
pub use lookahead::{Lookahead, DEFAULT_LOOKAHEAD_ALPHA, DEFAULT_LOOKAHEAD_K};
pub use optimizer::{
    adam_step, sgd_step, AdamHyper, Optimizer, OptimizerConfig, OptimizerKind, DEFAULT_ADAM_BETAS,
    DEFAULT_ADAM_EPS, DEFAULT_MOMENTUM,
};
pub use schedule::{LrSchedule, Schedule, ONECYCLE_DIV_FACTOR, ONECYCLE_FINAL_DIV_FACTOR};
