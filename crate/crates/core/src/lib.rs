//! Cohort discovery and multi-task mortality prediction for sparse clinical
//! time series.
//!
//! The pipeline has two steps. Episodes are embedded with a recurrent
//! sequence autoencoder and the embeddings are clustered with a Gaussian
//! mixture; each cluster then becomes one task of a multi-task recurrent risk
//! model with a shared trunk and per-cohort heads. Models are compared
//! per cohort and with micro and macro averaged metrics.

pub mod autoencoder;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod nn;
pub mod predictors;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
