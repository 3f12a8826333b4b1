//! Data preparation, experiment orchestration and reports.

pub mod config;
pub mod data;
pub mod experiment;
pub mod report;

pub use config::{DataSource, DeltaCap, ExperimentConfig};
pub use data::{generate_synthetic, load_csv, CsvOptions, LoadedCsv, ScaleFactors};
pub use experiment::{
    load_pool, loglog_slope, run_experiment, run_experiment_on, test_size, trial_split, CalibrationEcho, CellSummary,
    ExperimentReport, Metric, TrialSplit,
};
pub use report::{emit_report, render, ReportFormat};
