use std::time::Duration;

use thiserror::Error;

use crate::trace::EpisodeTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by model-facing backends, simulated or live.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport-level failures are worth retrying at the client; content failures are
    /// retried by the caller that knows how to interpret them.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Malformed(_) | BackendError::Config(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("segment [{start}, {end}] has no interior grid point and cannot be expanded")]
    Unexpandable { start: f64, end: f64 },
    #[error("backend contract violation: {0}")]
    ContractViolation(String),
    #[error("backend failed after {retries} retries: {source}")]
    Backend {
        retries: u32,
        #[source]
        source: BackendError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace error: {0}")]
    Trace(String),
    #[error("episode aborted in round {round}: {source}")]
    Episode {
        round: u32,
        /// Header and every round completed before the failure.
        partial: Box<EpisodeTrace>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
