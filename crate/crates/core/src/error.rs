use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric blow-up in path {path_id} at step {step}")]
    NumericBlowUp { path_id: usize, step: usize },

    #[error("latent blow-up at t = {time}")]
    LatentBlowUp { time: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("no analytic conditional expectation available: {0}")]
    NoOracle(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::Precondition(_) | Error::ShapeMismatch(_) => {
                ErrorClass::Usage
            }
            Error::NumericBlowUp { .. }
            | Error::LatentBlowUp { .. }
            | Error::NonFinite(_)
            | Error::TapeConsumed => ErrorClass::Numeric,
            Error::NoOracle(_) | Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorClass::Data
            }
        }
    }
}
