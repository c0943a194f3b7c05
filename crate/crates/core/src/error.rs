use thiserror::Error;

/// Errors raised by the preprocessing stages.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown event category `{0}`")]
    UnknownCategory(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid preprocessing config: {0}")]
    Config(String),

    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("event log is not sorted by (player_id, timestamp)")]
    Unsorted,

    #[error("sessions belong to different players (`{0}` and `{1}`)")]
    MixedPlayers(String, String),

    #[error("cannot bin a NaN value")]
    NanValue,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("invalid vocabulary file, line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },

    #[error("invalid generator config: {0}")]
    GenConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
