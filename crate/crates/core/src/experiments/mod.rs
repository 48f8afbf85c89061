//! Experiment suites.

pub mod config;
pub mod kernels;
pub mod nonlinear;
pub mod run;
pub mod summary;

pub use config::{ExperimentConfig, ExperimentId};
pub use run::{run_experiment, Check, RunOutput};
