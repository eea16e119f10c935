use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A data row has a different field count than the first row.
    #[error("format error at row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    /// A field could not be parsed as a real number (1-based row and column).
    #[error("parse error at row {row}, column {column}: cannot read {field:?} as a number")]
    Parse {
        row: usize,
        column: usize,
        field: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Incompatible tensor shapes handed to a primitive.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("training diverged at epoch {epoch} (lr = {lr}): loss is not finite")]
    Diverged { epoch: usize, lr: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
