use thiserror::Error;

/// Errors raised by model construction, estimation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or malformed inputs.
    #[error("validation error: {0}")]
    Validation(String),

    /// A computation produced a non-finite value or could not be completed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Rank diagnostics failed and the caller did not force the computation.
    #[error("rank condition failed: {0}")]
    RankCondition(String),

    /// A cross-fitting fold failed to fit.
    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::RankCondition(_) => 3,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
