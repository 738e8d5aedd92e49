//! Experiment runner for the dual-buffer continual learner: TOML configs,
//! seeded multi-run orchestration, CSV and SVG reports, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::CliError;
