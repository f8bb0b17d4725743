//! Command-line front end: run configuration, subcommands and the named experiment presets.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use app::run;
pub use error::{CliError, CliResult};
