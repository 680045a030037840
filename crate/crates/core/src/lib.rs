//! Budget-constrained residual networks for CIFAR-10, trained with
//! hand-written forward and backward passes.
//!
//! * [`ops`]: differentiable kernels (conv, batch norm, linear, pooling,
//!   activations, dropout, cross-entropy).
//! * [`model`]: the configurable residual network and its parameter count.
//! * [`init`], [`optim`]: initialisation, optimisers, clipping, Lookahead
//!   and learning-rate schedules.
//! * [`data`]: CIFAR-10 binary ingestion, normalisation and augmentation.
//! * [`train`]: the epoch loop, metrics, checkpoints and config files.
//! * [`gradcheck`]: finite-difference verification of every backward pass.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod optim;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use data::{Dataset, NormStats};
pub use error::{Error, Result};
pub use init::{InitKind, InitScheme};
pub use model::{count_params, Model, ResNetConfig};
pub use rng::{RngState, RngStream};
pub use tensor::{Mode, Scalar, Tensor};
pub use train::{TrainConfig, Trainer};
