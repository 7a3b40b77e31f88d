//! Command-line pipeline around `surrogate-core`: dataset files, subcommands
//! and report rendering.

pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod report;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
