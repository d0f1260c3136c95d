use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("record {index}: {reason}")]
    Ingest { index: usize, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer} ({name})")]
    NonFinite { layer: usize, name: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("format error at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
