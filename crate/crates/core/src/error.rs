use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface. Variants group into the four
/// exit-code classes used by the CLI (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("utterance `{utterance_id}`: {check}")]
    InvalidUtterance { utterance_id: String, check: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing intermediate `{0}`")]
    MissingIntermediate(PathBuf),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("replay miss: no recorded response for hash {0}")]
    ReplayMiss(String),

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("non-finite value at stage `{0}`")]
    NonFinite(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 usage/config, 2 data error, 3 backend failure, 4 internal invariant breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::InvalidUtterance { .. }
            | Error::Data(_)
            | Error::MissingIntermediate(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
            Error::Backend(_) | Error::ReplayMiss(_) => 3,
            Error::Invariant(_) | Error::NonFinite(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
