//! Progressive iteration pruning and structured-sparse fused ConvGRU
//! execution for a small recurrent stereo-refinement model.

pub mod data;
pub mod error;
pub mod flash;
pub mod model;
pub mod pip;
pub mod tensor;
pub mod trace;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
