use thiserror::Error;

pub type Result<T, E = VbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VbError {
    /// Argument outside the domain of a special function or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("observation sequence is empty")]
    EmptySequence,

    #[error("no observations supplied")]
    EmptyData,

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed model file: {0}")]
    Model(String),

    #[error("unsupported model schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VbError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        VbError::Domain(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(VbError::DimensionMismatch { expected, found })
        }
    }
}
