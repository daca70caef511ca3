//! Saliency-driven sparse-token vision transformer.

pub mod bench;
pub mod error;
pub mod model;
pub mod patching;
pub mod saliency;
pub mod signal;
pub mod training;

pub use error::{Result, SmtError};
