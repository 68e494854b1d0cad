use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no reachable origin-destination pair in network")]
    NoReachablePair,

    #[error("vehicle {vehicle} exceeded {multiple}x its free-flow travel time ({spent_s} s vs {free_flow_s:.1} s free-flow) at second {second}")]
    NonTermination {
        vehicle: u64,
        multiple: f64,
        spent_s: u64,
        free_flow_s: f64,
        second: u64,
    },

    #[error("interval aggregation requires exactly 60 second samples, got {0}")]
    BadIntervalLength(usize),

    #[error("training diverged (loss became non-finite) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("predictor input shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown routing strategy '{0}' (expected one of TT_m, GHG_m, TT&GHG_m, TT_a, GHG_a, TT&GHG_a)")]
    UnknownStrategy(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
