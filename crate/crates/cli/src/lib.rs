//! Config loading, the training pipeline and subcommand bodies behind the
//! `cka` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
