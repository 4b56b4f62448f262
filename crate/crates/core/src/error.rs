use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("no tags")]
    NoTags,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rate exceeds dead-time limit: {rate} Hz >= {limit} Hz")]
    RateExceedsDeadTime { rate: f64, limit: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("alignment failed: best agreement {agreement:.3} below {required:.3}")]
    AlignmentFailed { agreement: f64, required: f64 },

    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Pipeline stage that produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fft,
    Correction,
    Revalidation,
    Tracking,
    Demodulation,
    Alignment,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Fft => "fft",
            Stage::Correction => "correction",
            Stage::Revalidation => "revalidation",
            Stage::Tracking => "tracking",
            Stage::Demodulation => "demodulation",
            Stage::Alignment => "alignment",
        };
        f.write_str(s)
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
