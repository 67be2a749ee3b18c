use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("batch-norm running statistics are uninitialized; run at least one training step first")]
    Uninitialized,
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] oled_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
