use std::path::PathBuf;

use thiserror::Error;

/// Failure classes are kept distinct so callers (the CLI in particular) can
/// map them onto separate exit codes.
#[derive(Debug, Error)]
pub enum NcaError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("bad magic: not an NCA checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {0} (expected 1)")]
    UnsupportedVersion(u32),

    #[error("truncated checkpoint: expected {expected} bytes, found {actual}")]
    TruncatedCheckpoint { expected: usize, actual: usize },

    #[error("checkpoint contains a non-finite parameter in {0}")]
    NonFiniteParameter(&'static str),

    #[error("non-finite value at step {step} of {total}")]
    NonFinite { step: usize, total: usize },

    #[error("need at least 2 frames, found {0}")]
    TooFewFrames(usize),

    #[error("frame {path} has size {actual}, expected {expected}")]
    InconsistentFrames {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("undefined correlation: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("insufficient data: {found} valid rows, need at least {needed}")]
    InsufficientData { found: usize, needed: usize },

    #[error("invalid config {path} at `{field}`: {message}")]
    Config {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("malformed data in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl NcaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NcaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        what: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        NcaError::ShapeMismatch {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = NcaError> = std::result::Result<T, E>;
