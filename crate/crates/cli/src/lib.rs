//! Command-line driver for fedsim: config parsing, result directories and
//! the `solve-energy`, `solve-perf`, `train`, `analyze` and `sweep`
//! subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Outcome, EXIT_ERROR, EXIT_FALLBACK, EXIT_OK};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
