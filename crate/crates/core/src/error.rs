use thiserror::Error;

/// Errors produced by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("format error at byte offset {offset}: {msg}")]
    BinaryFormat { offset: u64, msg: String },
    #[error("format error on line {line}: {msg}")]
    TextFormat { line: usize, msg: String },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("infeasible label coverage: {parties} parties x {k} labels < {classes} classes")]
    InfeasibleCoverage {
        parties: usize,
        k: usize,
        classes: usize,
    },
    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),
    #[error("party {party} diverged in round {round} (non-finite loss)")]
    Divergence { party: usize, round: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl FedError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        FedError::Io {
            path: path.display().to_string(),
            msg: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FedError>;
