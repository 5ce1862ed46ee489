//! Command-line harness: configuration ingestion, command dispatch and
//! stable tabular output for pricing runs, sensitivity sweeps,
//! moment-convergence tables, rate conversion, Monte Carlo validation and
//! scaling benchmarks.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult};
