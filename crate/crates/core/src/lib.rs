pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod models;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
