//! File formats, commands and example pipelines of the `dynunc` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipelines;

pub use config::{PipelineConfig, PipelineKind};
pub use error::{CliError, Result};
