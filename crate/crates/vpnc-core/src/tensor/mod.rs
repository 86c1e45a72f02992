//! Minimal reverse-mode autodiff engine.
//!
//! Training runs in f32; the coding path instantiates the same graph code
//! in f64, which is the reproducibility boundary for entropy parameters:
//! encoder and decoder must compute bitwise-identical values from the same
//! checkpoint. All kernels traverse data in a fixed order, so results do
//! not depend on thread count or call history.

mod adam;
pub mod gradcheck;
pub mod kernels;
mod graph;
mod scalar;
mod store;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use scalar::Scalar;
pub use store::{param_seed, ParamStore};
pub use tensor::Tensor;
