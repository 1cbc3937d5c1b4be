//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// File could not be read or written.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// File exists but its contents are not a supported format.
    #[error("format error on {path}: {reason}")]
    Format { path: String, reason: String },

    /// A precondition on the inputs was violated.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A numerical procedure failed (singular system, divergence).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }

    /// Exit code the CLI maps this error onto: 2 for usage/input problems,
    /// 1 for internal numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 1,
            _ => 2,
        }
    }
}
