use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate sample_id {id:?} at rows {first} and {second}")]
    DuplicateSample {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("unknown label {name:?}; valid labels are [{valid}]")]
    UnknownLabel { name: String, valid: String },

    #[error("label {0:?} has no entry in the label map")]
    UnmappedLabel(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("selector {selector} is not valid: {reason}")]
    InvalidSelector { selector: String, reason: String },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("meta-training stack leaks {} base-portion samples (first: {})", ids.len(), ids.first().map(String::as_str).unwrap_or(""))]
    Leakage { ids: Vec<String> },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input (as opposed to a failing
    /// pipeline stage). The CLI maps this onto its exit codes.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::File { .. } | Error::UndefinedMetric(_))
    }
}
