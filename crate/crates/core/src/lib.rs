//! Joint object-category and 3D pose estimation with category-dependent pose heads.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod losses;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod selfcheck;
pub mod so3;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Rotation = so3::Rotation<f64>;
pub type AxisAngle = so3::AxisAngle<f64>;
pub type EulerPose = so3::EulerPose<f64>;
pub type Mat3 = so3::Mat3<f64>;
pub type Tensor2 = nn::Tensor2<f64>;
pub type ParameterStore = nn::ParameterStore<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type Network = model::Network<f64>;
pub type CategoryDistribution = model::CategoryDistribution<f64>;
pub type HeadOutputs = model::HeadOutputs<f64>;
