use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported kind: {0}")]
    UnsupportedKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A mechanism precondition does not hold; the message names the violated inequality.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported scale: {0}")]
    UnsupportedScale(String),

    #[error("inconsistent mechanism state: {0}")]
    Inconsistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
