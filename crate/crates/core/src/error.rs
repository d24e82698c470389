use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad IDX magic {found:#010x} (expected {expected:#010x})")]
    Format { found: u32, expected: u32 },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncation { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch} (last good epoch: {last_good_epoch:?})")]
    Divergence {
        epoch: usize,
        last_good_epoch: Option<usize>,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
