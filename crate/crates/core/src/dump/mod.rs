//! Activation dump: a directory of JSON records and binary tensors that
//! decouples model inference from feature computation.

mod reader;
pub mod tensor;
mod types;
mod validate;
mod writer;

pub use reader::{ActivationDump, AttentionStream, LoadParts};
pub use tensor::DType;
pub use types::*;
pub use validate::{validate, validate_document, Finding, ValidationReport};
pub use writer::DumpWriter;
pub mod synth;
pub use synth::{effect_strength, synthesize, synthetic_wordlist, SynthConfig};
