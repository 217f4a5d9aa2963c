use std::path::PathBuf;

/// Unified error type for the library and CLI.
///
/// Variants are grouped by how the binary maps them to exit codes:
/// usage problems (1), I/O and file-format problems (2), and numeric
/// failures such as training divergence or singular systems (3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed an argument that violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Reading or writing a file failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed, but its contents don't match the expected schema
    /// or version.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A numeric routine failed: divergence, singular linear system,
    /// non-finite intermediate, or a solver that refused to converge
    /// in strict mode.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error class: 1 usage, 2 I/O or
    /// format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
