//! Token-level uncertainty features from transformer activations, a
//! gradient-boosted tree classifier over them, and evaluation tooling.

pub mod assembler;
pub mod classifier;
pub mod dump;
pub mod error;
pub mod eval;
pub mod features;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, Result};
pub use features::FeatureConfig;
