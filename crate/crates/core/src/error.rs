use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("transform error: {0}")]
    Transform(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported operation in graph: {0}")]
    UnsupportedOp(&'static str),
    #[error("training error: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, flags, files).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Capacity(_) | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
