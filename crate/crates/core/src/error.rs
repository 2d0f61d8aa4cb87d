use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric overflow: `{op}` produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph state error: {0}")]
    State(String),

    #[error("function is not deterministic: two forward passes disagree")]
    NonDeterministic,

    #[error("non-differentiable point: stencil around parameter {param} entry {index} changes a discrete branch")]
    NonDifferentiablePoint { param: usize, index: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {detail}")]
    Malformed { line: usize, detail: String },

    #[error("line {line}: schema error: missing or invalid field `{field}`")]
    Schema { line: usize, field: &'static str },

    #[error("line {line}: format error: {detail}")]
    Format { line: usize, detail: String },

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: String },

    #[error("checkpoint tensor `{name}` has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (recent losses: {history:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        history: Vec<f64>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
