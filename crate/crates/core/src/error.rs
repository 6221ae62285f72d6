use alloc::string::String;

/// Errors raised by the core model, objective and world routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("field schema mismatch: {0}")]
    FieldMismatch(String),
    #[error("out-of-vocabulary value {value} in field `{field}`")]
    OutOfVocabulary { field: String, value: u32 },
    #[error("row {index} out of range for field `{field}` with {rows} rows")]
    IndexOutOfRange { field: String, index: u32, rows: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient {value} in block `{block}` at element {index}")]
    NonFiniteGradient { block: String, index: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vocabulary is not a superset of the teacher vocabulary: {0}")]
    NotSuperset(String),
    #[error("empty window: {0}")]
    EmptyWindow(String),
    #[error("regime {0} requires a teacher")]
    MissingTeacher(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("misaligned comparison: {0}")]
    Misaligned(String),
}

pub type Result<T> = core::result::Result<T, Error>;
