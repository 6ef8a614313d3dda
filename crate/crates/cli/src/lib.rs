//! Command-line front end: file formats, run manifests, benchmarks and subcommands.

pub mod bench;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
