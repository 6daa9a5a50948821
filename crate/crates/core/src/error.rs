use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners out of order or not finite")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("empty batch: no samples to {0}")]
    EmptyBatch(&'static str),

    #[error("gradient norm {norm} falls in empty bin {bin}")]
    EmptyBin { norm: f64, bin: usize },

    #[error("value {value} for `{name}` is out of range: {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("length mismatch for `{name}`: expected {expected}, got {actual}")]
    LengthMismatch {
        name: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("EMA input must be positive and finite, got {0}")]
    NonPositiveEmaInput(f64),

    #[error("invalid anchor set: {0}")]
    InvalidAnchors(String),

    #[error("canvas {width}x{height} too small to place {requested} ground-truth boxes")]
    CanvasTooSmall {
        width: f64,
        height: f64,
        requested: usize,
    },

    #[error("training diverged at step {step}: non-finite {what}")]
    Divergence { step: usize, what: &'static str },

    #[error("need at least 2 positive samples, got {0}")]
    TooFewPositives(usize),

    #[error("config error: {0}")]
    Config(String),
}
