//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the rodessa library.
#[derive(Debug, Error)]
pub enum RodessaError {
    #[error("invalid window length {window}: must satisfy 1 < L < {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("series must have N >= 2 time points and p >= 1 series, got {rows}x{cols}")]
    EmptySeries { rows: usize, cols: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("{what} = {got} out of range 1..={max}")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("rank {rank} exceeds min(L, K) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("M-scale undefined: all {n} values are zero")]
    DegenerateScale { n: usize },

    #[error("M-scale equation has no root: {reason}")]
    ScaleNotBracketed { reason: String },

    #[error("sqrt-composed loss requires a nonnegative argument, got {value}")]
    NegativeLossArg { value: f64 },

    #[error("recurrence undefined: verticality {nu2} too close to 1")]
    Verticality { nu2: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("calibration table mismatch: {0}")]
    TableMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, RodessaError>;
