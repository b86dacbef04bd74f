use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("image has no pixels")]
    EmptyImage,

    #[error("expected 3 color channels, got {0}")]
    ChannelCount(usize),

    #[error("pixel buffer length {got} does not match {width}x{height}x{channels}")]
    BufferLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("edit {index} at ({x}, {y}) is outside the {width}x{height} image")]
    EditOutOfBounds {
        index: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("edit {index} has invalid color or size: {reason}")]
    InvalidEdit { index: usize, reason: String },

    #[error("color distribution row is empty (all zeros) at ({row}, {col})")]
    EmptyDistribution { row: usize, col: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("model/gamut mismatch: {0}")]
    ModelMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at step {step} (loss {loss}); last good checkpoint: {last_good:?}")]
    Diverged {
        step: usize,
        loss: f64,
        last_good: Option<PathBuf>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
