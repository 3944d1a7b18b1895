use std::io;

use thiserror::Error;

/// Errors produced by the planning toolkit.
#[derive(Debug, Error)]
pub enum CinError {
    #[error("map side must be at least 3, got {0}")]
    InvalidSide(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state ({row}, {col}) is outside a {side}x{side} map")]
    OutOfBounds { row: usize, col: usize, side: usize },

    #[error("state ({row}, {col}) is not traversable")]
    NotTraversable { row: usize, col: usize },

    #[error("state ({row}, {col}) cannot reach the goal")]
    Unreachable { row: usize, col: usize },

    #[error("kernel size must be odd, got {0}")]
    EvenKernelSize(usize),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, CinError>;
