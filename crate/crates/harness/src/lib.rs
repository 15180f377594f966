//! Experiment harness for fedsim: config loading, partition export,
//! experiment runs, reports, and the numerical self-test.

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod report;

use fedsim_core::FedError;

pub use commands::{cmd_partition, cmd_run, PartitionOutput, RunOutput, RunRecord, SummaryRow};
pub use config::{load_config, parse_config, ExperimentConfig};
pub use gradcheck::{cmd_gradcheck, GradcheckOptions, GradcheckReport};
pub use report::{cmd_report, ReportOutput};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] FedError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("report error: {0}")]
    Report(String),
}

impl HarnessError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        HarnessError::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// The key path of a config error, if any.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            HarnessError::Config { path, .. } => Some(path),
            _ => None,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
