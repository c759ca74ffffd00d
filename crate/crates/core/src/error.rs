use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot parse config: {0}")]
    ConfigParse(String),

    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient audio: {samples} samples, one clip needs {needed}")]
    InsufficientAudio { samples: usize, needed: usize },

    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),

    #[error("{path}: keypoint file has {found} points, expected {expected}")]
    KeypointCount {
        path: PathBuf,
        found: usize,
        expected: usize,
    },

    #[error("sequence `{name}` rejected: {reason}")]
    Misaligned { name: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("checkpoint {path} was written for config hash {found}, current config hashes to {expected}")]
    ConfigHashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("missing prerequisite: no `{stage}` checkpoint at {path}")]
    MissingPrerequisite { stage: String, path: PathBuf },

    #[error("numerical divergence in {stage} at step {step}: {detail}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Divergence {
        stage: String,
        step: usize,
        detail: String,
        last_good: Option<PathBuf>,
    },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Self::Decode {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit status for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingPrerequisite { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
