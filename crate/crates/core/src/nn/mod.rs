//! Minimal neural-network kernel: convolution, dense layers, pooling,
//! activations, binary cross-entropy, backpropagation over layer stacks,
//! and Adam. Everything is generic over [`crate::tensor::Real`] so training
//! runs in `f32` while gradient checks run in `f64`.

pub mod activ;
pub mod adam;
pub mod conv;
pub mod dense;
pub mod gemm;
pub mod init;
pub mod loss;
pub mod pool;
pub mod stack;

#[cfg(test)]
pub mod testutil;

pub use activ::{relu, sigmoid, softmax_channels};
pub use adam::{AdamHyper, AdamState};
pub use conv::{ConvLayer, Padding};
pub use dense::DenseLayer;
pub use loss::{bce_loss, BCE_EPS};
pub use pool::{maxpool2, upsample2};
pub use stack::{backward_pass, forward, forward_cached, zero_grads, Layer, LayerCache, LayerGrads};
