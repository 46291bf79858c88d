//! Stage-by-stage pipeline driver: synthetic data or raw files in, cohort
//! assignments, trained predictors and an evaluation report out.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod plots;
pub mod report;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use stages::{Outcome, Pipeline, Stage};
