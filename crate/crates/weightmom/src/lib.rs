//! Experiment harness for sparse training: dataset loaders, configuration,
//! checkpoints, CSV metrics, plots and the cell runner behind the
//! `weightmom` binary.

pub mod checkpoint;
pub mod config;
pub mod datasets;
mod error;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use error::{Error, Result};
