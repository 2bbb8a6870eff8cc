use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("row {row}, column {column}: non-numeric feature value {value:?}")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("label column {0:?} not found")]
    UnknownColumn(String),
    #[error("need at least 3 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {0} would be empty in the first part of the split")]
    EmptyClass(usize),
    #[error("pair classes must differ")]
    SamePair,
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("degenerate triple: {0}")]
    Degenerate(String),
    #[error("matrix is numerically singular (condition estimate {0:.3e})")]
    Singular(f64),
    #[error("QP solver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lambda {lambda} outside traced range [{low}, {high}]")]
    OutOfRange { lambda: f64, low: f64, high: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initialization failed for pair ({i}, {j}) {side}: {reason}")]
    InitFailed {
        i: usize,
        j: usize,
        side: String,
        reason: String,
    },
    #[error("model file: {0}")]
    Model(String),
    #[error("empty examining set")]
    EmptyExamine,
}
