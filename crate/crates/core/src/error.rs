use std::path::PathBuf;

use crate::model::NodeId;
use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("duplicate key {0:?}")]
    DuplicateKey(String),

    #[error("missing embedding for key {0:?}")]
    MissingKey(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid frame {frame}: {message}")]
    InvalidFrame { frame: String, message: String },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("segment {segment} of object {object} contains point {point} outside its object")]
    OverlapViolation {
        object: NodeId,
        segment: usize,
        point: u32,
    },

    #[error("tree invariants violated: {}", format_violations(.0))]
    Invariant(Vec<Violation>),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("categories mixed in a single-category evaluation: {0:?} and {1:?}")]
    MixedCategories(String, String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    let shown: Vec<String> = v.iter().take(5).map(|v| v.to_string()).collect();
    let mut s = shown.join("; ");
    if v.len() > 5 {
        s.push_str(&format!("; ... ({} total)", v.len()));
    }
    s
}
