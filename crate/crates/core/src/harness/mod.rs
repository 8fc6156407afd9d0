//! Experiment orchestration: configs, the round loop, metrics and reporting.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, LoraSettings, Method, TaskConfig};
pub use metrics::{cost_ratios, mean_cost_ratios, RoundMetrics};
pub use report::{csv_string, dump_rounds, fmt_sig10, round_dump_json, write_csv, CSV_HEADER};
pub use runner::{prepare, run_experiment, sample_participants, ExperimentReport, Setup};
