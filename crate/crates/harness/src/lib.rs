//! Experiment runner for the samlab studies: TOML experiment documents,
//! seeded runs on a worker pool, CSV traces, SVG figures and JSON reports.

pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod runner;
pub mod summary;
pub mod svg;
pub mod trace;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{ConfigError, HarnessError, Result};
pub use runner::{run_experiment, Bundle, ExperimentReport};
