//! The `seedgrow` command-line workflow: dataset generation, training,
//! inference, evaluation, ablations and the HTTP service.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use args::Cli;
pub use commands::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult, ErrorKind};
