//! Command-line front end and experiment pipeline for lattice rescoring.

pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod selftest;
pub mod world_io;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, PipelineSummary};
