use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data integrity error at row {row}: {message}")]
    DataIntegrity { row: usize, message: String },

    #[error("duplicate date {date} at row {row}")]
    DuplicateDate { row: usize, date: NaiveDate },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate scale factor: {0}")]
    DegenerateScale(String),

    #[error("numeric overflow at {date}: {message}")]
    NumericOverflow { date: NaiveDate, message: String },

    #[error("parameter constraint violated: {0}")]
    Constraint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("estimation failed to converge: {0}")]
    NonConvergence(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("rank deficient regression: {0}")]
    Rank(String),

    #[error("division by zero target at {date}")]
    ZeroTarget { date: String },

    #[error("insufficient exceedances: {found} (need at least {needed})")]
    InsufficientExceedances { found: usize, needed: usize },

    #[error("misaligned series: {0}")]
    Misaligned(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
