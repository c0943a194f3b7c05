//! Sparse-attention masked language model over behavior token sequences,
//! built on a small reverse-mode differentiation engine.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod masking;
pub mod metrics;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use config::{ModelConfig, Preset};
pub use encoder::Model;
pub use error::{ModelError, Result};
pub use graph::{Graph, Var};
pub use masking::{Batch, MaskedBatch};
pub use metrics::{Metrics, MetricsReport};
pub use tensor::{ParamSet, Tensor};
pub use train::{TrainConfig, TrainLog};
