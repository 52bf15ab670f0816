//! Distributed execution over TCP: a master broadcasting the input vector to
//! worker processes that stream back per-batch results.

pub mod frame;
mod master;
pub mod provision;
mod worker;

pub use master::{run_master, Master, MasterOptions, RunMetrics, RunReport};
pub use provision::{load_task, prepare, provision, worker_dir, ProvisionOptions, Provisioned, WorkerMeta, WorkerSlice};
pub use worker::{serve_connection, serve_worker, spawn_local_worker, SessionEnd, WorkerOptions};
