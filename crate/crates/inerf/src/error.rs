use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: mismatched dimensions, unknown keys, bad ranges.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input outside an operation's documented domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Non-finite values or training divergence.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Filesystem / format errors, naming the offending path where known.
    #[error("i/o error at {path:?}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Io { path: path.into(), msg: msg.into() }
    }

    /// Process exit code for the CLI (0 success, 2 config, 3 numeric, 4 i/o).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
