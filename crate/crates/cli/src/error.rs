use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] divc::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid value for {key}: {value:?}")]
    Value { key: String, value: String },

    #[error("{0}")]
    Usage(String),

    #[error("pipeline gate failed: {0}")]
    Gate(String),
}
