//! Library side of the `micropack` tool: run configuration, strategy dispatch and
//! the artifact formats it emits.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod gantt;

pub use config::{load_config, Overrides, RunConfig, Workload};
pub use error::CliError;
