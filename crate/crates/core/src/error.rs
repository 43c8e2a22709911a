use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification of failures, used by drivers to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Validation,
    DegenerateClass,
    InvalidArgument,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("bag `{bag}` has no instances")]
    EmptyBag { bag: String },
    #[error("instance `{instance}` in negative bag `{bag}` is flagged as ground-truth object")]
    GroundTruthInNegativeBag { bag: String, instance: String },
    #[error("zero feature vector cannot be L2-normalized ({context})")]
    ZeroVector { context: String },
    #[error("invalid dataset: {0}")]
    Validation(String),
    #[error(
        "degenerate {class} class at iteration {iteration}: mass {mass:e} below floor {floor:e}"
    )]
    DegenerateClass {
        class: &'static str,
        iteration: usize,
        mass: f64,
        floor: f64,
    },
    #[error("none of the {pairs} bandwidth pairs gives a converged, non-degenerate run")]
    NoViableBandwidth { pairs: usize },
    #[error("non-finite score {score} for {context}")]
    NonFiniteScore { score: f64, context: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            // an unreadable input is reported as a parse failure by the CLI
            Error::Read { .. } | Error::Parse { .. } => ErrorKind::Parse,
            Error::Write { .. } => ErrorKind::Io,
            Error::DimensionMismatch { .. }
            | Error::EmptyBag { .. }
            | Error::GroundTruthInNegativeBag { .. }
            | Error::ZeroVector { .. }
            | Error::Validation(_) => ErrorKind::Validation,
            Error::DegenerateClass { .. }
            | Error::NoViableBandwidth { .. }
            | Error::NonFiniteScore { .. } => ErrorKind::DegenerateClass,
            Error::InvalidArgument(_) => ErrorKind::InvalidArgument,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
