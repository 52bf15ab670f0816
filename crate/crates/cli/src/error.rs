use std::io;

use bpcc_core::Error as CoreError;
use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or invalid input file or arguments (exit 2).
    #[error("{0}")]
    Schema(String),

    /// Well-formed input that cannot be satisfied: infeasible allocation,
    /// failed estimation, failed run (exit 3).
    #[error("{0}")]
    Infeasible(String),

    /// Filesystem or network failure (exit 4).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, e: io::Error) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidParameter(_)
            | CoreError::InvalidAllocation(_)
            | CoreError::Domain { .. }
            | CoreError::Format(_)
            | CoreError::Json(_) => CliError::Schema(msg),
            CoreError::InfeasibleTask { .. }
            | CoreError::Estimation(_)
            | CoreError::Numeric(_)
            | CoreError::InsufficientRedundancy { .. }
            | CoreError::DecodeFailure(_)
            | CoreError::RunFailure(_) => CliError::Infeasible(msg),
            CoreError::Protocol(_) | CoreError::WorkerIo { .. } | CoreError::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Schema(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
