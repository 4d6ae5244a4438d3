use std::io;

use thiserror::Error;

pub type Result<T, E = PiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PiError {
    #[error("invalid query (seq {seq}): {reason}")]
    InvalidQuery { seq: u64, reason: &'static str },

    #[error("input not strictly sorted at position {position}: key {key}")]
    Unsorted { position: usize, key: u32 },

    #[error("key {0} is reserved")]
    ReservedKey(u32),

    /// The storage or index layer violated one of its ordering invariants.
    #[error("structural corruption: {0}")]
    Corruption(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stale node reference (structure was rebuilt or dropped)")]
    StaleNode,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
