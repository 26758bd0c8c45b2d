use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid size {0}: must be positive and finite")]
    InvalidSize(f64),
    #[error("cardinality mismatch: {left} vs {right} points")]
    CardinalityMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("inconsistent input: {0}")]
    Consistency(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("relation cannot be satisfied: {0}")]
    RelationUnsatisfiable(String),
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite loss at step {step}")]
    NonFinite {
        step: usize,
        dump: Box<crate::training::DiagnosticDump>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
