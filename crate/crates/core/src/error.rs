use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants fall into three families that the CLI maps onto its exit codes:
/// validation problems (bad shapes, bad arguments, bad config), numerical
/// failures (non-finite values, singular systems) and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode index {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-positive divisor entry {value} at flat index {index}")]
    NonPositiveDivisor { index: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("not a TEN1 file: {0}")]
    NotTen1(PathBuf),

    #[error("truncated TEN1 payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("missing input file: {0}")]
    MissingInput(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs or the disk.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::NotPositiveDefinite(_)
                | Error::NonPositiveDivisor { .. }
                | Error::NonFinite(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::NotTen1(_)
                | Error::Truncated { .. }
                | Error::MissingInput(_)
                | Error::Io { .. }
                | Error::Csv(_)
        )
    }
}
