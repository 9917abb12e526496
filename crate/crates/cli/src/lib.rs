//! Config-driven experiment runner over `arfc-core`.

pub mod commands;
pub mod config;
pub mod experiments;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run_sweep, Context, SweepOutput, Table};
