//! The configurable residual network: hyperparameters, construction,
//! forward/backward and parameter counting.

mod block;
mod config;
mod count;
mod layers;
mod network;
mod params;
mod se;

pub use config::{avgpool_kernel, ResNetConfig, SePlacement, DEFAULT_SE_RATIO, INPUT_SIZE, MAX_LAYERS};
pub use count::count_params;
pub use network::Model;
pub use params::{BufferStore, ParamKind, ParamStore, Parameter};
pub use se::{se_backward, se_forward, se_hidden, SeCache, SeGrads, SeWeights};
