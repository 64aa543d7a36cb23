use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input outside the mathematical domain of a formula, e.g. a fidelity
    /// threshold at or below 1/2 for the timeout logarithm.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Io,
    Internal,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Topology(_) | Error::Argument(_) => ErrorCategory::Config,
            Error::Domain(_) | Error::Numerical(_) => ErrorCategory::Numerical,
            Error::Io(_) | Error::Csv(_) => ErrorCategory::Io,
            Error::Protocol(_) => ErrorCategory::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
