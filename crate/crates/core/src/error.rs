use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LencError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("transfer aborted: {0}")]
    Aborted(String),

    #[error("snapshot validation failed at `{field}`: {reason}")]
    Snapshot { field: String, reason: String },

    #[error("scoring failed: {0}")]
    Scoring(String),

    #[error("routing failed: {0}")]
    Routing(String),

    #[error("node has no knowledge (T = 0)")]
    NoKnowledge,

    #[error("policy not applicable: {0}")]
    PolicyInapplicable(String),

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("community has no peers to query")]
    NoPeers,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LencError {
    fn from(e: std::io::Error) -> Self {
        LencError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LencError>;
