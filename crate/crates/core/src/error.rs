use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// IoU requested between two boxes that both have zero area.
    #[error("IoU is undefined for two zero-area boxes")]
    UndefinedIou,

    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): {what}")]
    DegenerateBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        what: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("array length {got} does not match anchor count {expected}")]
    Misaligned { expected: usize, got: usize },

    #[error("probability {0} outside [0, 1]")]
    Probability(f64),

    #[error("{}:{line}: {msg}", .path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<input>".into()))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    #[error("{count} detections for {image} exceed the per-image cap of {cap}")]
    OverCap {
        image: String,
        count: usize,
        cap: usize,
    },

    #[error("detections reference images missing from ground truth: {}", .0.join(", "))]
    UnknownImages(Vec<String>),

    #[error("no ground-truth faces in subset {0}")]
    EmptySubset(String),

    #[error("could not place {requested} faces after {attempts} attempts")]
    Placement { requested: usize, attempts: usize },

    #[error("no boxes to sample from")]
    NoBoxes,

    #[error("unknown stem variant {0:?}")]
    UnknownVariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: None,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a file path to a parse error.
    pub fn at_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: Some(p.into()),
                line,
                msg,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
