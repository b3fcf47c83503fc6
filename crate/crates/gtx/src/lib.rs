//! Experiment harness for `gtx-core`: TOML configs, artifact directories
//! with hashed manifests, file formats, a thread pool for independent
//! cells, and report emission.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;

pub use commands::{run, Command, ExperimentSpec, Outcome};
pub use error::{CliError, Result};
