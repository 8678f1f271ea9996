pub mod autodiff;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod generator;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocessing;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod tweaking;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used by the CLI and service.
pub type Real = f32;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ModelBundle32 = training::ModelBundle<f32>;
pub type ModelBundle64 = training::ModelBundle<f64>;
