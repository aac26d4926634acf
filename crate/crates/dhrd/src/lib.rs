//! Training runner, file formats, evaluation, benchmarks and the `dhrd`
//! command line on top of `dhrd-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod run;
pub mod sweep;

pub use config::RunConfig;
pub use error::{Error, Result};
