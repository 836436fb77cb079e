use thiserror::Error;

/// Errors raised across ingestion, fitting, estimation and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// The dataset or its file representation violates a structural invariant.
    #[error("invalid data: {0}")]
    Data(String),

    /// A configuration value (randomizer, adjuster, scenario) is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Estimation cannot proceed on the given data (e.g. an empty stratum-arm cell).
    #[error("estimation aborted: {0}")]
    Estimation(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Estimation(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
