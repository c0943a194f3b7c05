use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("every target is ignored; the loss is undefined")]
    AllIgnored,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("mask rate {0} is outside (0, 1)")]
    MaskRate(f64),
    #[error("no maskable positions in the batch")]
    NothingToMask,
    #[error("no position was selected for masking after {0} draws")]
    EmptyMask(usize),
    #[error("token id {id} is outside the vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("input of {len} tokens exceeds the block size {block}")]
    TooLong { len: usize, block: usize },
    #[error("corpus has {blocks} blocks, fewer than one batch of {batch}")]
    SmallCorpus { blocks: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("held-out player `{0}` also appears in the training split")]
    Overlap(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Shape {
        op,
        detail: detail.into(),
    }
}
