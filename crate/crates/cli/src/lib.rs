//! Experiment harness around the weak-supervision training library: a flat
//! key-value config format, per-seed experiment execution with artifact
//! persistence, and the switch-ablation grid.

#![forbid(unsafe_code)]

pub mod config;
pub mod runner;

pub use config::{ConfigError, DataSource, ExperimentConfig, Method, Overrides};
pub use runner::{ablate_experiment, run_experiment, RunError, RunSummary};
