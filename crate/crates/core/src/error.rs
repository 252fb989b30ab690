use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("{op}: range {start}..{end} out of bounds for axis {axis} of length {len}")]
    OutOfBounds {
        op: &'static str,
        axis: usize,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("{op}: axis {axis} invalid for rank {rank}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward has already been run on this tape")]
    BackwardTwice,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("row {row} has norm {norm:e}, cosine similarity undefined")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
