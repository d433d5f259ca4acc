use thiserror::Error;

/// Errors raised by graph construction, evaluation and checkpoint IO.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at node `{node}`: {detail}")]
    Shape { node: String, detail: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("missing input `{0}`")]
    MissingInput(String),

    #[error("backward called without a preceding forward pass")]
    NoForwardCache,

    #[error("non-finite value produced by node `{0}`")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
