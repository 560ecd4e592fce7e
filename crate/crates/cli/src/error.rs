use keys::cluster::ClusterError;
use keys::explain::ExplainError;
use keys::optimize::{OracleError, SearchError};
use keys::DataError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const TRUNCATED: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Cluster(ClusterError::Config(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}
