//! Minimal reverse-mode automatic differentiation engine.
//!
//! The pieces fit together like this: [`Tensor`] is a dense row-major array,
//! [`Graph`] records one forward pass as a tape of operations over [`Var`]
//! handles, [`ParamStore`] owns the learnable tensors across passes, and
//! [`Adam`] updates them from gradients collected after
//! [`Graph::backward`]. [`check_gradients`] verifies the whole arrangement
//! against central finite differences.

pub mod adam;
mod conv;
pub mod gradcheck;
pub mod graph;
mod norm;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{check_gradients, grad_error, CheckReport, CheckSettings};
pub use graph::{Graph, Var};
pub use params::{GraphParams, ParamStore};
pub use scalar::{sigmoid, softplus, Scalar};
pub use tensor::{offset, Tensor};

pub use norm::NORM_EPS;
