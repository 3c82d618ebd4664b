use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unknown config key `{key}` (line {line})")]
    UnknownConfigKey { key: String, line: usize },

    #[error("simulation diverged after {steps} steps")]
    SimulationDivergence { steps: usize },

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("corrupt file at byte offset {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },

    #[error("cannot balance data: {0}")]
    UnbalanceableData(String),

    #[error("unknown object {0}")]
    UnknownObject(u64),

    #[error("weight transfer error: {0}")]
    Transfer(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn corrupt(offset: u64, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            offset,
            reason: reason.into(),
        }
    }
}
