use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("segment {index} overlaps segment {other} on a set of positive length")]
    OverlappingSegments { index: usize, other: usize },

    #[error("crack geometry lies outside the grid box: {0}")]
    OutsideBox(String),

    #[error("field has {got} values but the grid has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("capacity target captures no grid node at h = {h}")]
    DegenerateTarget { h: f64 },

    #[error("mask pins no interior node; the Rayleigh quotient infimum is zero")]
    UnpinnedMask,

    #[error("crack of length {length} is invisible on a grid with h = {h}")]
    ResolutionTooCoarse { length: f64, h: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
