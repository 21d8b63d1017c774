//! Dense float32 tensors with reverse-mode differentiation, Adam, and a
//! checksummed parameter file format.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use adam::Adam;
pub use graph::{GradError, Gradients, Graph, GruVars, ParamKey, Var};
pub use tensor::{clip_grad_norm, Param, ParamId, ParamSet, Tensor};
