//! Experiment runner for concept- and class-incremental streams: config
//! handling, the phase loop for each learner, evaluation and reports.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{validate_config, Diagnostic, ExperimentConfig, LearnerKind, Severity};
pub use error::CliError;
pub use runner::{run_experiment, PhaseSource, RunOptions, RunSummary, TableSource};
