use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the clustering engine.
///
/// The variants map onto the three failure categories reported by the
/// command-line tool: I/O, validation (including malformed files and numeric
/// failures) and bad arguments.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    /// A file did not match its binary or text layout.
    #[error("format error: {0}")]
    Format(String),
    /// Data parsed correctly but violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => Error::Io(e),
                _ => unreachable!(),
            }
        } else {
            Error::Format(err.to_string())
        }
    }
}
