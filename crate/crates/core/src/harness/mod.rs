//! Config-driven experiment grid: validation, resumable execution,
//! aggregation, reports and the command-line front end.

pub mod cli;
mod config;
mod convert;
mod report;
mod runner;
mod surrogate;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::archive::ArchiveError;
use crate::data::DataError;
use crate::freeze::{FineTuneStrategy, FreezeError};
use crate::metrics::MetricError;
use crate::net::NetError;
use crate::training::{CheckpointError, TrainError};

pub use config::{
    load_config, parse_config, run_seed, validate_spec, DatasetConfig, EncoderWeights, EvaluationConfig,
    ExperimentConfig, ExperimentSpec, PlannedRun, ReportFormat, SplitSection, OUTPUT_DIR_ENV, SCHEMA_VERSION,
};
pub use convert::{convert_safetensors, read_safetensors, torchvision_to_canonical, ConversionReport};
pub use report::{
    aggregate, emit_report, literature, load_results, read_table, AggregateRow, AggregateTable, LiteratureRow,
    CSV_HEADER,
};
pub use runner::{
    audit, load_dataset_for, run_experiment, AuditRow, AuditTable, RunEvent, RunFailure, RunOptions, RunResult,
    RunSummary, EXPERIMENT_FILE, RESULT_FILE,
};
pub use surrogate::surrogate_encoder;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("no run results to aggregate")]
    EmptyResults,
    #[error("incomplete results, missing runs: {}", format_missing(.0))]
    Incomplete(Vec<(FineTuneStrategy, usize)>),
    #[error("{} run(s) failed: {}", .0.len(), .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    RunsFailed(Vec<RunFailure>),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Freeze(#[from] FreezeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn format_missing(missing: &[(FineTuneStrategy, usize)]) -> String {
    missing
        .iter()
        .map(|(s, r)| format!("{s}/{r}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Machine-readable form written to stderr by the CLI.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Parse(_) => "parse",
            HarnessError::Invalid { .. } => "invalid_config",
            HarnessError::Io { .. } => "io",
            HarnessError::Format { .. } => "format",
            HarnessError::EmptyResults => "empty_results",
            HarnessError::Incomplete(_) => "incomplete_results",
            HarnessError::RunsFailed(_) => "runs_failed",
            HarnessError::Net(_) => "network",
            HarnessError::Freeze(_) => "freeze",
            HarnessError::Data(_) => "data",
            HarnessError::Train(_) => "training",
            HarnessError::Checkpoint(_) => "checkpoint",
            HarnessError::Archive(_) => "archive",
            HarnessError::Metric(_) => "metric",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
