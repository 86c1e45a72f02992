//! Crate-wide error type.
//!
//! Variants are grouped by how a caller should react: bad input data,
//! configuration/checkpoint disagreement, or a corrupt bitstream. The CLI
//! maps these groups onto distinct process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input: bad dimensions, out-of-range values, missing files.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A sphere direction requested during reassembly lies outside every planned viewport.
    #[error("no viewport covers direction (lon {lon_deg:.3} deg, lat {lat_deg:.3} deg)")]
    Uncovered { lon_deg: f64, lat_deg: f64 },

    /// Tensor shape disagreement inside the compute graph.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Non-finite value observed at an operation boundary.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Model configuration and checkpoint disagree (missing tensors, wrong shapes, hash mismatch).
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Configuration file rejected (unknown kind, inconsistent fields, version skew).
    #[error("config error: {0}")]
    ConfigError(String),

    /// Bitstream cannot be decoded: bad magic, truncation, checksum failure, coder state violation.
    #[error("corrupt stream at byte {offset}: {detail}")]
    CorruptStream { offset: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn corrupt(offset: usize, detail: impl Into<String>) -> Self {
        Error::CorruptStream { offset, detail: detail.into() }
    }

    /// Process exit code used by the CLI: 2 input, 3 config/checkpoint, 4 corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Uncovered { .. }
            | Error::ShapeMismatch { .. }
            | Error::NonFinite(_)
            | Error::Io(_)
            | Error::Image(_) => 2,
            Error::CheckpointMismatch(_) | Error::ConfigError(_) => 3,
            Error::CorruptStream { .. } => 4,
        }
    }
}
