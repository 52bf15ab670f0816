//! Batch-processing coded computing (BPCC) for distributed matrix-vector
//! multiplication over heterogeneous workers.

pub mod allocation;
pub mod coding;
pub mod error;
pub mod model;
pub mod net;
pub mod numerics;
pub mod sim;

pub use error::{Error, Result};
