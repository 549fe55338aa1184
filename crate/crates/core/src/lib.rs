//! Augmented equivariant attention networks for paired image
//! super-resolution.

pub mod attention;
pub mod error;
pub mod imaging;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod permutation;
pub mod properties;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
