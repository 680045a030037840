//! Differentiable kernels with hand-written backward passes.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_with, BatchNormCache, BatchNormState,
    RunningStats, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub use conv::{
    conv2d_backward, conv2d_backward_direct, conv2d_forward, conv2d_forward_direct, conv_geometry,
    conv_output_size, ConvGeometry,
};
pub use dropout::{dropout_apply, dropout_backward, dropout_forward};
pub use linear::{linear_backward, linear_forward};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use pool::{avgpool_backward, avgpool_forward, global_avgpool_backward, global_avgpool_forward};
