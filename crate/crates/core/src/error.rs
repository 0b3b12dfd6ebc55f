use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no depth data at pixel ({u:.2}, {v:.2})")]
    NoData { u: f64, v: f64 },
    #[error("region of interest contains no valid depth pixels")]
    EmptyCloud,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("face localization failed: {0}")]
    LocalizationFailed(String),
    #[error("tracking lost at frame {frame}")]
    TrackingLost { frame: usize },
    #[error("expected covariance undefined: nu = {nu} must exceed dimension + 1 = {min}")]
    UndefinedVariance { nu: f64, min: f64 },
    #[error("frame index mismatch: {0}")]
    IndexMismatch(String),
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
