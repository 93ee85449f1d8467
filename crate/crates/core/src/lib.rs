pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod optim;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
