use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by the simulator, the effect estimator, the models
/// and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structure has no diseases")]
    EmptyStructure,
    #[error("structural validation failed: {0}")]
    Structure(String),
    #[error("unknown reference: {0}")]
    Reference(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("window {window} is beyond the last window {last}")]
    Horizon { window: usize, last: usize },
    #[error("alignment mismatch: {0}")]
    Alignment(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("imputation statistics unavailable: {0}")]
    Imputation(String),
    #[error("all runs invalid: {0}")]
    AllRunsInvalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyStructure
            | Error::Structure(_)
            | Error::Reference(_)
            | Error::Config(_)
            | Error::Horizon { .. } => 2,
            Error::AllRunsInvalid(_) => 4,
            _ => 3,
        }
    }
}
