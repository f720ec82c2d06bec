//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },

    #[error("task {task_id}: invariant violation: {rule}")]
    Invariant { task_id: String, rule: String },

    #[error("unknown element id {id}")]
    UnknownElement { id: String },

    #[error("element {id} is not visible")]
    NotVisible { id: String },

    #[error("document lacks parent links (element {id} has none)")]
    MissingParentLinks { id: String },

    #[error("image format error at byte {offset}: {message}")]
    ImageFormat { offset: usize, message: String },

    #[error("box ({x}, {y}, {w}, {h}) lies fully outside the feature grid")]
    BoxOutsideGrid { x: f64, y: f64, w: f64, h: f64 },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("weights file error: {0}")]
    WeightsFormat(String),

    #[error("chooser returned out-of-range option index {index} for a group of {len} options")]
    ChooserContract { index: usize, len: usize },

    #[error("cannot compute a mean over an empty outcome set")]
    EmptyOutcomes,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("page layout failed after {attempts} attempts: {reason}")]
    Layout { attempts: usize, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invariant(task_id: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Invariant {
            task_id: task_id.into(),
            rule: rule.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
