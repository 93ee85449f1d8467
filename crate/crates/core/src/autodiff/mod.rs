//! Tensor operations with reverse-mode differentiation.

mod conv;
mod gradcheck;
mod graph;
mod norm;
mod winograd;

pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, grad_check_entries, grad_check_multi, relative_error, RELATIVE_ERROR_FLOOR, GradCheckReport};
pub use graph::{BatchNormOutput, Gradients, Graph, Mode, Var};
pub use norm::{BatchNormConfig, RunningStats};

#[cfg(test)]
mod tests;
