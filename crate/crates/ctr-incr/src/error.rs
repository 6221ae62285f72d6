use std::io;

/// Errors from file formats, configuration and the pipeline driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] ctr_incr_core::Error),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("missing field: {0}")]
    Missing(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp {timestamp} precedes previous record at {previous}")]
    Ordering { line: usize, timestamp: u64, previous: u64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cycle at hour {hour}: {source}")]
    Cycle {
        hour: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
