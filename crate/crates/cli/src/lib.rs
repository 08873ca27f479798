//! Command implementations behind the `cladnet` binary.

pub mod config;
pub mod experiment;
pub mod report;
pub mod table;

pub use config::{ExperimentConfig, ModelConfig, Precision, RunConfig};
pub use experiment::{ablation_grid, cmd_ablate, cmd_prepare, cmd_train, Axis, Overrides};
pub use report::cmd_report;
