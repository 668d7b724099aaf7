//! Dense tensors, a reverse-mode autodiff tape and the Adam optimizer.

mod array;
pub(crate) mod conv;
mod graph;
mod ops;
mod optim;
mod params;
pub(crate) mod resize;

pub use array::Tensor;
pub use conv::{conv_output_size, deconv_output_size, Conv2dOptions, Deconv2dOptions};
pub use graph::{Graph, Var};
pub use ops::BCE_EPS;
pub use optim::{adam_step, AdamConfig};
pub use params::{glorot_bound, he_bound, ParamEntry, ParamStore};
pub use resize::resize_tensor;
