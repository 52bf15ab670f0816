use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    /// Fewer rows than workers, so some worker would receive no load.
    #[error("infeasible task: r = {r} rows cannot cover {workers} workers")]
    InfeasibleTask { r: u64, workers: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("argument {x} outside the domain {domain}")]
    Domain { x: f64, domain: &'static str },

    #[error("insufficient redundancy: q = {q} < r = {r}")]
    InsufficientRedundancy { q: usize, r: usize },

    #[error("decode failed: {0}")]
    DecodeFailure(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("run failed: {0}")]
    RunFailure(String),

    #[error("worker {worker}: {source}")]
    WorkerIo {
        worker: usize,
        #[source]
        source: io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
