use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("out-group density delta0 = {delta0} exceeds the sparsity bound {bound}")]
    DeltaBound { delta0: f64, bound: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("all {restarts} restarts failed: {diagnostics}")]
    AllRestartsFailed { restarts: usize, diagnostics: String },

    #[error("exact enumeration is capped at {cap} nodes, got {n}")]
    EnumerationCap { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
