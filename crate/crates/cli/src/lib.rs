//! Command-line pipeline for the zero-shot skeleton action recognition model.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
