use std::io;

use thiserror::Error;

use crate::reference::GenerationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown symbol {0:?} (vocabulary is P S 0-9 \\n C)")]
    UnknownSymbol(char),

    #[error("token id {0} is outside the vocabulary")]
    OutOfRangeId(u32),

    #[error("sequence of length {len} exceeds the fixed length {max}")]
    TooLong { len: usize, max: usize },

    #[error("invalid digit string {text:?}: {reason}")]
    InvalidDigits { text: String, reason: String },

    #[error("collation needs at least one stage output")]
    EmptyStageList,

    #[error("bad stage output {0:?}: expected one or two digits")]
    BadStageOutput(String),

    #[error("output prefix must start with the '\\n' token")]
    BadPrefix,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("malformed stage output {output:?} for stage input {input:?}")]
    MalformedOutput {
        input: String,
        output: String,
        partial: Box<GenerationTrace>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
