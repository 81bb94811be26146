//! Parameter networks: positional embedding, dense heads and the optimiser.

pub mod adamw;
pub mod dense;
pub mod embedding;
pub mod model;

pub use adamw::{AdamWConfig, AdamWState};
pub use dense::{Activation, DenseStack};
pub use embedding::{embed, EmbeddingConfig};
pub use model::{FieldTape, MlpModel, ModelConfig};
