use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected {expected} domain data, got {got}")]
    Domain { expected: &'static str, got: &'static str },
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
