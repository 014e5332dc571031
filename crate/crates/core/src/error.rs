use std::path::PathBuf;

/// Errors raised by dataset handling, training, imputation and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}: no records")]
    NoRecords(PathBuf),
    #[error("dimension {dim} (camera {camera}, feature {feature}) has no observed values")]
    UnobservedDimension {
        dim: usize,
        camera: usize,
        feature: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("training data contains a single class; at least two are required")]
    SingleClass,
    #[error("sample {sample} has missing values in dimension {dim}; impute before training")]
    MissingValues { sample: usize, dim: usize },
    #[error("forest was trained without leaf member tracking")]
    TrackingDisabled,
    #[error("no mutually observed dimensions between sample {0} and the complete set")]
    NoSharedDimensions(usize),
    #[error("dimensions with zero range cannot be normalized: {0:?}")]
    ZeroRange(Vec<usize>),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
