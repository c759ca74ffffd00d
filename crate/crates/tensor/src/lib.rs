//! Dense tensors generic over `f32`/`f64`, a reverse-mode tape, and the
//! handful of layers the generation pipeline is built from.

mod graph;
pub mod kernels;
pub mod nn;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{sigmoid, softplus, CustomOp, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::{lit, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
