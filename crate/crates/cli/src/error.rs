use std::path::PathBuf;

use serde::Serialize;
use todsim_acute::store::StoreError;
use todsim_acute::BuildError;
use todsim_core::agents::AgentError;
use todsim_core::bootstrap::{BootstrapError, TrainerError};
use todsim_core::data_io::DataError;
use todsim_core::metrics::MetricError;
use todsim_core::mock_api::TableError;
use todsim_core::orchestrator::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_AGENT: i32 = 4;
pub const EXIT_TRAINER: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Agent(String),
    #[error("{0}")]
    Trainer(String),
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Agent(_) => EXIT_AGENT,
            CliError::Trainer(_) => EXIT_TRAINER,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } => "IoError",
            CliError::Data(_) => "DataError",
            CliError::Agent(_) => "AgentError",
            CliError::Trainer(_) => "TrainerError",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        CliError::Io {
            path: path.into(),
            reason: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => CliError::io(path, source),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io(source) => CliError::io("api table", source),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        CliError::Agent(e.to_string())
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Data(d) => d.into(),
            other => CliError::Trainer(other.to_string()),
        }
    }
}

impl From<BootstrapError> for CliError {
    fn from(e: BootstrapError) -> Self {
        match e {
            BootstrapError::Trainer(t) => t.into(),
            BootstrapError::Data(d) => d.into(),
            BootstrapError::Config(c) => c.into(),
            BootstrapError::Metric(m) => m.into(),
            BootstrapError::Agent(a) => a.into(),
            other @ BootstrapError::Snapshot { .. } => CliError::Data(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { path, source } => CliError::io(path, source),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::Data(e.to_string())
    }
}
