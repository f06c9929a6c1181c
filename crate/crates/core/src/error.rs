use std::path::PathBuf;

/// Crate-wide error type.
///
/// The split between `Config`/`Usage` and the runtime variants matters to the
/// CLI: configuration problems exit with code 2, mid-run failures with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid shapes, unsupported operation configurations, bad hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad command-line arguments or malformed run configuration files.
    #[error("usage error: {0}")]
    Usage(String),

    /// Numerical failure at run time (NaN/Inf where finite values are required).
    #[error("numerical error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// Autodiff misuse (backward on a non-scalar, repeated backward, missing grad).
    #[error("autodiff error: {0}")]
    Autodiff(String),

    /// Dataset or checkpoint file problems.
    #[error("{path}: {detail}")]
    File { path: PathBuf, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::File { path: path.into(), detail: detail.into() }
    }

    /// Exit code the CLI should use for this error: 2 for configuration and
    /// usage problems, 1 for everything that failed mid-run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
