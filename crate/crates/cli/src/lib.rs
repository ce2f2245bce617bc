//! Experiment plumbing for the `amp` binary.

pub mod config;
pub mod run;

pub use config::{ConfigError, Overrides, RunConfig};
pub use run::{CliError, VERSION_STAMP};
