//! Dense tensor kernels for small spatiotemporal CNNs.
//!
//! Every layer is a pair of free functions: a forward pass returning its output
//! together with an opaque cache, and a backward pass that consumes that cache.
//! Kernels are generic over [`Scalar`] so the same code runs in single precision
//! for training and double precision for gradient checking.
//!
//! Layouts are row-major throughout. Volumes are `(B, C, T, H, W)`, flat
//! features are `(B, F)`.

mod activation;
mod conv;
mod dropout;
mod error;
mod gating;
pub mod gradcheck;
mod linalg;
mod linear;
mod norm;
mod pool;
mod scalar;
mod softmax;
mod tensor;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, ReluCache, SigmoidCache};
pub use conv::{conv3d, conv3d_backward, conv3d_backward_params, Conv3dCache, Conv3dGrads};
pub use dropout::{dropout, dropout_backward, DropoutCache};
pub use error::{Result, TensorError};
pub use gating::{scale_channels, scale_channels_backward, ChannelScaleCache};
pub use linalg::gemm;
pub use linear::{linear, linear_backward, LinearCache, LinearGrads};
pub use norm::{batchnorm3d, batchnorm3d_backward, BatchNormCache, BatchNormGrads, RunningStats};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool3d, maxpool3d_backward, AvgPoolCache,
    MaxPoolCache,
};
pub use scalar::{Precision, Scalar};
pub use softmax::{log_softmax, softmax};
pub use tensor::Tensor;

/// Whether a layer runs with training-time behaviour (batch statistics,
/// dropout masks) or inference behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
