//! Command-line driver for compositional controller synthesis: run
//! configuration, learned-table artifacts, reports and the commands built on
//! `compsynth-core`.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod par;
pub mod report;

pub use commands::{Overrides, Run};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
