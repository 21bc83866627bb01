//! Minimal self-contained neural-network kernel.
//!
//! Provides exactly what the simulator's two fixed architectures need:
//! 4D tensors, 2D convolution, ReLU, global average pooling, a dense
//! head, MSE and softmax cross-entropy losses, hand-written
//! backpropagation, and SGD with momentum. Generic over [`Scalar`] so
//! the same code runs in 32-bit for training and 64-bit for the
//! finite-difference gradient oracle used in tests.

mod checkpoint;
mod loss;
mod network;
mod ops;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    read_params, read_segment_header, write_params, write_segment_header, CheckpointError,
    MAGIC,
};
pub use loss::{cross_entropy_loss, cross_entropy_loss_grad, mse_loss, mse_loss_grad};
pub use network::{classifier_loss_grad, regression_loss_grad, LayerDef, Network};
pub use ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, global_avg_pool_backward,
    global_avg_pool_forward, relu, relu_backward, ConvSpec, Padding,
};
pub use optim::{sgd_momentum_step, MomentumState};
pub use params::{LayerKind, LayerShape, ParamVector};
pub use tensor::Tensor4;

use num_traits::Float;
use std::fmt::Debug;
use thiserror::Error;

/// Floating-point element type for tensors and parameters.
pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
