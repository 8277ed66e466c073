pub mod classifiers;
pub mod compat;
pub mod data;
pub mod gan;
pub mod error;
pub mod mmd;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Matrix, Tensor};
