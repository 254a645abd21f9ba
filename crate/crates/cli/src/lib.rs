//! Command-line orchestration of the attribution robustness pipeline.

pub mod config;
pub mod error;
pub mod layout;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
