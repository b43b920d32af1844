pub mod error;
pub mod evaluation;
pub mod indices;
pub mod model;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod training;

/// Version tag recorded in every artifact's provenance.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use model::{DroughtFormer, ModelConfig, UpsampleMethod};
pub use pipeline::{GridSpec, VariableCatalog};
pub use tensor::{no_grad, PadMode, Tensor};
