use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed schema: {0}")]
    Schema(String),

    #[error("header does not match schema: {0}")]
    SchemaMismatch(String),

    #[error("variable `{variable}` has no level `{value}`")]
    UnknownLevel { variable: String, value: String },

    #[error("no complete rows remain ({dropped} dropped)")]
    EmptyDataset { dropped: usize },

    #[error("continuous variable `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("invalid truncation interval ({lower}, {upper})")]
    InvalidInterval { lower: f64, upper: f64 },

    #[error("covariance matrix is not symmetric positive definite")]
    NonSpdCovariance,

    #[error("parameter out of domain: {0}")]
    NonPositiveParameter(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("variable `{0}` has zero overall variance")]
    ZeroOverallVariance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed sample store: {0}")]
    Store(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
