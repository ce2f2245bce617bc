use thiserror::Error;

pub type Result<T> = std::result::Result<T, AmpError>;

#[derive(Debug, Error)]
pub enum AmpError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op} at index {index}: value {value}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("depth support exceeded the cap of {cap} layers (runaway variance?)")]
    GrowthCap { cap: usize },

    #[error("non-finite value in {what} (graph {graph:?})")]
    NonFinite { what: String, graph: Option<usize> },

    #[error("graph is disconnected: node {node} unreachable from node {from}")]
    Disconnected { from: usize, node: usize },

    #[error("generator {generator} failed to produce a connected graph after {attempts} attempts")]
    GenerationFailed {
        generator: String,
        attempts: usize,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AmpError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AmpError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        AmpError::Contract(msg.into())
    }
}
