//! Experiment harness for the `pixadv` binary.

pub mod config;
pub mod experiment;
pub mod train;

pub use config::{ExperimentConfig, Overrides};
pub use experiment::{run_experiment, run_sweep, ExperimentReport, SweepParam};
