//! Training orchestration, batched restoration, benchmarking and
//! evaluation behind the `resyn` command.

pub mod benchmark;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod pipeline;
pub mod plot;
pub mod restore;
pub mod shard;

pub use error::{Error, Result};
