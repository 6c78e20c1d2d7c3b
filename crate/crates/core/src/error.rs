use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("csv row {row}: {message}")]
    Csv { row: u64, message: String },

    #[error("unsupported model schema version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },

    #[error("layer {index} is {found}, expected {expected}")]
    WrongLayerKind {
        index: usize,
        found: String,
        expected: &'static str,
    },

    #[error("layer {index} ({kind}) is not supported here: {reason}")]
    Unsupported {
        index: usize,
        kind: String,
        reason: String,
    },

    #[error("multiplicative depth budget exhausted at {context}: operand level {level}")]
    DepthExhausted { context: String, level: u32 },

    #[error("static multiplicative depth {depth} exceeds the budget of {budget} levels")]
    DepthBudget { depth: u32, budget: u32 },

    #[error("batch of {requested} instances exceeds the slot capacity {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("operand mismatch: {0}")]
    Operand(String),

    #[error("block masks are frozen")]
    MasksFrozen,

    #[error("training step {step} precedes the pruning start step {start}")]
    BeforeScheduleStart { step: usize, start: usize },

    #[error("layer {0} would be shrunk to zero units")]
    EmptyLayer(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
