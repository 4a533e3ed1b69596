//! Experiment configuration, runners, CSV output and the command-line front end.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;

pub use cli::cli_main;
pub use config::{ExperimentConfig, ExperimentKind, InitMode, SurfaceSpec, SweepConfig};
pub use experiments::{
    run_convergence_sweep, run_diagnostics, run_escape_ratio, run_experiment, run_many, run_seed_table, run_trajectory,
    ExperimentOutput, RunOptions, RunOutcome, TrajectoryRecord,
};
