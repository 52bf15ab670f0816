//! Command-line harness: scenario files in, JSON reports and CSV tables out,
//! plus the master and worker process entry points.
//!
//! Exit codes: 0 success, 2 malformed input, 3 infeasible task or failed
//! estimation or run, 4 filesystem or network failure.

pub mod commands;
mod error;
pub mod output;
pub mod scenario;

pub use error::{CliError, CliResult};
pub use scenario::ScenarioFile;
