//! Plaintext networks: architecture grammar, inference, training,
//! watermark embedding and real-arithmetic extraction.

mod data;
mod io;
mod model;
mod spec;
mod train;
mod watermark;

pub use data::{blobs, digits, read_csv, Dataset, DatasetSource};
pub use io::{ModelFile, Provenance};
pub use model::{infer, sigmoid, LayerParams, ModelWeights};
pub use spec::{Layer, ModelSpec, Shape};
pub use train::{accuracy, embed_watermark, predict, train_baseline, EmbedConfig, TrainConfig};
pub use watermark::{extract_plaintext, trigger_count, ExtractionTrace, KeyConfig, WatermarkKey};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    DivergenceDetected { epoch: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid watermark key: {0}")]
    InvalidKey(String),
    #[error("model file: {0}")]
    ModelFile(String),
}
