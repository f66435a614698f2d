use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the benchmark library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: content hash mismatch (header {expected}, computed {computed})")]
    HashMismatch { path: PathBuf, expected: String, computed: String },

    #[error("replay inconsistency in episode {episode_id} at step {step}: {msg}")]
    Replay { episode_id: u64, step: usize, msg: String },

    #[error("action index {action} out of range for {candidates} candidates")]
    ActionOutOfRange { action: usize, candidates: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String, last_good: Box<crate::policy::checkpoint::Checkpoint> },

    #[error("unknown episode id {0}")]
    UnknownEpisode(u64),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
