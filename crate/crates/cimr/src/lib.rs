//! Experiment harness for the CIMR closed-loop reasoning artifact.
//!
//! Builds scenario corpora, sweeps engine variants over paired scenario
//! sets, aggregates per-round cumulative accuracy, and persists traces,
//! result tables, and correction triplets. Also home to the remote backend
//! client speaking the `/v1/respond` wire protocol.

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod remote;

pub use config::{load_config, BackendChoice, ConfigError, ExperimentConfig, OutputFormat};
pub use experiment::{
    build_scenarios,
    aggregate_metrics, emit_results, export_correction_triplets, load_trace_rows,
    rows_from_trace, run_experiment, solve_context_factor, ResultRow, ResultsTable, RunOutput,
    TraceRow,
};

use std::path::PathBuf;

use cimr_core::error::BackendError;
use thiserror::Error;

/// Harness-level failures.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed trace line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for backend
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Backend(_) => 3,
            _ => 1,
        }
    }
}
