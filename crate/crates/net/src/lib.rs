//! Minimal reverse-mode autodiff and the refocusing networks built on it.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod dpm;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod infer;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{NetError, Result};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
