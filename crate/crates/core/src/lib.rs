//! Bidirectional predictive network for long-term video interpolation.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type Frame32 = dataset::Frame<f32>;
pub type Frame64 = dataset::Frame<f64>;
pub type Clip32 = dataset::Clip<f32>;
pub type Clip64 = dataset::Clip<f64>;
