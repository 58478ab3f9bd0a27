//! Batch experiment front-end: configuration, seed management, replicate
//! orchestration, result persistence and reports.
//!
//! A run writes into one output directory:
//!
//! * `config.toml`: the canonical form of the config;
//! * `NN_kind/`: results of experiment `NN` (JSONL, JSON and CSV) and its `summary.json`;
//! * `manifest.json`: config hash, tool version, seeds, file inventory with checksums, timings;
//! * `summary.txt`, `estimates.csv`, `checks.csv`: the report.

pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod summary;

pub use config::{parse_config, Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use report::{emit_report, Report};
pub use runner::run_experiment;
