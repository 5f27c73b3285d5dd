use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("selective risk is undefined at zero coverage (threshold {0})")]
    UndefinedRisk(f64),

    #[error("training diverged{} at epoch {epoch}: loss {loss}", member.map(|m| format!(" for ensemble member {m}")).unwrap_or_default())]
    TrainingDivergence {
        member: Option<usize>,
        epoch: usize,
        loss: f64,
    },

    #[error("policy family construction failed: {0}")]
    PolicyOrdering(String),

    #[error("unknown policy id `{0}`")]
    UnknownPolicy(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {} does not exist", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
