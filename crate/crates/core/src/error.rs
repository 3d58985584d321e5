use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RdrpError>;

#[derive(Debug, Error)]
pub enum RdrpError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate batch: treated={n1}, control={n0}; both arms are required")]
    DegenerateBatch { n1: usize, n0: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("roi* out of scope: diff-in-means ratio {ratio} is outside ({lo}, {hi})")]
    RoiScope { ratio: f64, lo: f64, hi: f64 },

    #[error("calibration degenerate: {0}")]
    CalibrationDegenerate(String),

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("instance too large for exhaustive search: {n} individuals (max {max})")]
    SizeLimit { n: usize, max: usize },

    #[error("schema error: missing column `{0}`")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RdrpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RdrpError::Io {
            path: path.into(),
            source,
        }
    }
}
