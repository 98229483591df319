//! Minimal reverse-mode differentiation core: row-major matrices, an eager
//! tape with the primitives a small transformer needs, SGD, and a
//! checkpoint format. Everything is generic over [`Scalar`] so the same code
//! trains in `f32` and is gradient-checked in `f64`.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::SgdState;
pub use params::ParamSet;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
