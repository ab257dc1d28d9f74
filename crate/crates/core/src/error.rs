use thiserror::Error;

/// Incompatible operand shapes when recording a graph operation.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("shape mismatch in {op}: {lhs} is {}x{} but {rhs} is {}x{}", lhs_shape.0, lhs_shape.1, rhs_shape.0, rhs_shape.1)]
pub struct ShapeError {
    pub op: &'static str,
    pub lhs: String,
    pub lhs_shape: (usize, usize),
    pub rhs: String,
    pub rhs_shape: (usize, usize),
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed dataset JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid example `{id}`: {message}")]
    Validation { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("answer of example `{id}` not found in any gold document")]
    AnswerNotFound { id: String },
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("interchange format error: {0}")]
    Format(String),
    #[error("interchange data corrupt: {0}")]
    Corrupt(String),
    #[error("no embedding slot `{slot}` for example `{id}`")]
    MissingSlot { id: String, slot: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("pairwise ranking needs at least 2 documents, got {n}")]
    TooFewDocuments { n: usize },
    #[error("label {label} out of range for {len} positions")]
    LabelOutOfRange { label: usize, len: usize },
    #[error("empty input: {0}")]
    Empty(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint data corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint does not fit the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
