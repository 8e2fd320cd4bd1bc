//! Dense tensors, a sparse operator, and a reverse-mode tape covering the
//! primitives the model needs.

mod graph;
pub mod gradcheck;
mod params;
mod sparse;
mod tensor;

pub use graph::{row_softmax, sigmoid, ComputeGraph, Var, LOG_CLAMP};
pub use params::{Gradients, ParamId, ParamSet};
pub use sparse::Csr;
pub use tensor::Tensor;
