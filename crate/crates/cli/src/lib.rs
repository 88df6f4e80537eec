//! Library side of the `bru` executable. Every subcommand is a function
//! that writes its report to the given sink and returns an exit code, so the
//! binary stays a thin argument parser.

pub mod cli;
pub mod commands;
pub mod error;
pub mod spec;

pub use error::{CliError, CliResult, ExitCode};
pub use spec::{Architecture, ExperimentSpec};
