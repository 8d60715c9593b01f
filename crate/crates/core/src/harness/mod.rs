//! Experiment orchestration: configuration, method dispatch, repetitions,
//! label-bias sweeps and result files.

mod config;
mod emit;
mod run;

pub use config::{
    AnchorConfig, AnchorKind, ExperimentConfig, Method, PartitionConfig, SyntheticConfig, TestTransform,
};
pub use emit::{emit_results, format_results_csv, plot_sweep, Results, TIMESTAMP_FIELD};
pub use run::{run_experiment, run_sweep, ExperimentReport, RunRecord, SweepResult};

/// The label-bias grid used for sweeps by default.
pub const DEFAULT_R_GRID: [f64; 9] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.85, 0.9, 0.95, 1.0];
