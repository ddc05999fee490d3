//! Minimal trainable-layer toolkit with explicit forward and backward passes.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod dense;
pub mod gradcheck;
pub mod params;
pub mod softmax;
pub mod tensor;

pub use activation::Activation;
pub use adam::AdamConfig;
pub use batchnorm::{BatchNormLayer, BnCache, BnMode};
pub use dense::{DenseGrads, DenseLayer};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use params::{Gradients, Param, ParameterStore};
pub use softmax::{softmax, softmax_cross_entropy};
pub use tensor::Tensor2;
