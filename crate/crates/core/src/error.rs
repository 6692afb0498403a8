use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate gradient: norm {norm:e} is at or below the degeneracy threshold")]
    DegenerateGradient { norm: f64 },

    #[error("degenerate gradient sum: |g1 + g2| = {norm:e}")]
    DegenerateSum { norm: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing problem metadata: {0}")]
    MissingMetadata(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("out-of-order telemetry row: iteration {got} after {last}")]
    OutOfOrder { last: u64, got: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed data in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
