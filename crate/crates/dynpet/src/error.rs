//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or domain invariant was violated.
    #[error("validation: {0}")]
    Validation(String),

    /// An on-disk artifact could not be parsed. Carries the offending field.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// Filesystem failure while persisting or loading artifacts.
    #[error("persistence: {0}")]
    Io(#[from] std::io::Error),

    /// LVBP activity never reaches RVBP activity; the study is excluded.
    #[error("no EQ frame: LVBP activity never reaches RVBP activity")]
    NoEqFrame,

    /// Every optimizer start failed to produce a finite fit.
    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    /// Training aborted (e.g. non-finite loss). Carries a diagnostic snapshot.
    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
