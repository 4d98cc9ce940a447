//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    analytic_gradient, grad_check, numeric_partial, relative_error, richardson_partial, Coord,
    GradCheckConfig, GradCheckFailure, GradCheckReport,
};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
