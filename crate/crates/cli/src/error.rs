use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: oled_core::Error },
    #[error(transparent)]
    Core(#[from] oled_core::Error),
    #[error(transparent)]
    Net(#[from] oled_net::NetError),
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Stable identifier printed in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Manifest(_) => "manifest",
            CliError::Io { .. } => "io",
            CliError::File { .. } => "file_format",
            CliError::Core(_) => "core",
            CliError::Net(_) => "network",
            CliError::Toml { .. } => "config",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
            CliError::Failed(_) => "check_failed",
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// One-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
