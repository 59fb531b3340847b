//! Feature registries per configuration and per-token matrix assembly.

pub mod assemble;
pub mod matrix;
pub mod registry;

pub use assemble::{assemble, assemble_timed, plan, AssemblyOptions, AssemblyTimings, Plan};
pub use matrix::{DocRows, FeatureMatrix, MatrixMeta, MISSING_SENTINEL};
pub use registry::{registry, Column, FeatureRegistry, Group};
