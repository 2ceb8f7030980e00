use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A gateway received zero bits, so `log2(R_n)` does not exist.
    #[error("utility undefined: gateway {gateway} received zero bits")]
    UtilityUndefined { gateway: usize },

    #[error("fairness undefined: all throughputs are zero")]
    UndefinedFairness,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A config or weights file that does not parse.
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("sub-hour window {window} (starting at t={start}) has no samples")]
    Gap { window: usize, start: i64 },

    #[error("singular fit: regressor matrix is rank deficient")]
    SingularFit,

    #[error("insufficient history: need {needed} sub-hours before the frame, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InsufficientHistory { .. } => 2,
            Error::Parse { .. } | Error::Config { .. } => 3,
            Error::Csv(e) if !e.is_io_error() => 3,
            Error::Infeasible(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
