//! Recovery of images and videos collapsed along one dimension by a known
//! linear projection.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use projection::{project, ProjectionSpec};
pub use tensor::{Scalar, Tape, Tensor, Var};
