use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
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
    #[error("blank cell at row {row}, column {column}")]
    BlankCell { row: usize, column: String },
    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),
    #[error("label column must hold exactly 2 distinct values, found {0}")]
    LabelCardinality(usize),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("instance of size {size} exceeds oracle cap {cap}")]
    OracleCap { size: usize, cap: usize },
    #[error("matching instance is not balanced and complete")]
    Unbalanced,
    #[error("no shared features to match on")]
    NoSharedFeatures,
    #[error("peer B holds no labels")]
    MissingPeerLabels,
    #[error("not a permutation: {0}")]
    NotPermutation(String),
    #[error("taylor loss needs c != 0")]
    ZeroCurvature,
    #[error("quadratic form is not positive definite (smallest eigenvalue {0:e})")]
    Indefinite(f64),
    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),
    #[error("loss {0} is not a registered RSPL")]
    NotRspl(String),
    #[error("invertibility fails at step {step}: {detail}")]
    NotInvertible { step: usize, detail: String },
    #[error("drift chain cap exceeded ({what} = {got}, cap {cap})")]
    ChainCap {
        what: &'static str,
        got: usize,
        cap: usize,
    },
    #[error("degenerate optimum: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error comes from reading or validating input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::BlankCell { .. }
                | Error::NonNumeric { .. }
                | Error::MissingLabelColumn(_)
                | Error::LabelCardinality(_)
                | Error::InvalidDataset(_)
        )
    }
}
