use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax input is masked everywhere")]
    DegenerateMask,
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("input of {len} tokens exceeds the positional table of {max}")]
    TooLong { len: usize, max: usize },
    #[error("window {window} is infeasible at position {position}")]
    InfeasibleWindow { window: usize, position: usize },
    #[error("gate: {0}")]
    Gate(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label map mismatch: {0}")]
    LabelMismatch(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (conversations {first_id}..): loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        first_id: String,
        loss: f64,
    },
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
