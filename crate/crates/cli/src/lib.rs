//! Command-line orchestration: configuration, subcommands and artifacts.

pub mod commands;
pub mod config;

pub use commands::{run, ErrorRecord, Step};
pub use config::{Artifact, Overrides, PipelineConfig};
