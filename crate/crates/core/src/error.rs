use std::path::PathBuf;

use thiserror::Error;

use crate::hypothesis::{AgentId, HypIdx};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("infinite divergence: p({index}) > 0 but q({index}) = 0")]
    InfiniteDivergence { index: usize },

    #[error("cannot normalize a belief with zero total mass")]
    ZeroMass,

    #[error("Bayesian update has zero evidence: every hypothesis with prior mass has likelihood 0")]
    ZeroEvidence,

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("invalid hypothesis set: {0}")]
    InvalidHypotheses(String),

    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),

    #[error("unknown hypothesis index {0}")]
    UnknownHypothesis(HypIdx),

    #[error("sensor noise sigma must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("reading {x},{y} lies outside the observer's sensing window")]
    OutsideWindow { x: i32, y: i32 },

    #[error("path for agent {agent} is not periodic: {reason}")]
    NonPeriodicPath { agent: AgentId, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violated at step {step}: {detail}")]
    Invariant { step: usize, detail: String },

    #[error("scenario error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("scenario refused by validator: {0}")]
    Refused(String),

    #[error("trace format error in {path}: {message}")]
    TraceFormat { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by a runtime invariant check rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::Invariant { .. } | Error::ZeroMass | Error::ZeroEvidence
        )
    }
}
