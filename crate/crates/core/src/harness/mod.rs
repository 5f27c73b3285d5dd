//! Experiment orchestration: configs, pipeline stages, ablation sweeps and reports.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use config::ExperimentConfig;
pub use report::markdown_report;
pub use sweep::{run_sweep, MetricsRow, SweepResult};
