//! A compact reverse-mode automatic differentiation engine.
//!
//! Tensors are dense `f64` arrays. A [`Graph`] records every operation of a
//! forward pass and [`Graph::backward`] sweeps it in reverse. Parameters live
//! in [`ParamSet`]s and are pulled into a graph as leaves with [`Graph::param`].

mod conv;
pub mod gemm;
mod graph;
pub mod layers;
pub mod optim;
mod params;
mod tensor;

pub use graph::{apply_bn_updates, sigmoid, softplus, BnUpdate, Gradients, Graph, Var, BN_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Entry, EntryKind, ParamId, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
}

pub type Result<T> = std::result::Result<T, Error>;
