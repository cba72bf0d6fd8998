use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (e.g. a non-finite point).
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid configuration; `key` names the offending setting.
    #[error("configuration error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    /// A weight generator or dynamics that violates positivity.
    #[error("validity error: {0}")]
    Validity(String),
    #[error("numerical error at particle {particle}: {msg}")]
    Numerical { particle: usize, msg: String },
    /// Potential lacks the minimum/saddle structure an asymptotic formula needs.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors that stem from user-supplied settings rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Validity(_) | Error::Structural(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
