//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation contract (shape mismatch, bad width,
    /// out-of-range argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced non-finite values where finite ones are
    /// required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid or inconsistent parameters at construction time.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Unknown encoder id or other registry lookup failure.
    #[error("unknown encoder: {0}")]
    UnknownEncoder(String),

    /// The requested capability is not supported by this encoder kind.
    #[error("unsupported capability: {0}")]
    Unsupported(String),

    /// Configuration file errors (parse failures, rejected keys, bad values).
    #[error("config error: {0}")]
    Config(String),

    /// A referenced artifact (checkpoint, dataset, feature file) is missing.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Dataset or checkpoint container is corrupt or has the wrong version.
    #[error("corrupt container: {0}")]
    Corrupt(String),

    /// Scene reset could not satisfy placement constraints.
    #[error("reset error: {0}")]
    Reset(String),

    /// Demonstration collection failed (expert failure rate too high,
    /// infeasible scene placement).
    #[error("collection error: {0}")]
    Collection(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
