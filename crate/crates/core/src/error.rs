//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Rotation angle is too close to pi for a well-conditioned logarithm.
    /// Densify the trajectory knots so relative rotations stay small.
    #[error("rotation angle within {margin:.3e} rad of pi; log map is ill-conditioned")]
    RotationNearPi { margin: f64 },

    /// Query time falls outside the trajectory's supported window.
    #[error("time {t} outside the valid window [{start}, {end})")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    /// Frame or row index outside the camera/timing tables.
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// Parameter/gradient/moment buffers disagree in length.
    #[error("shape mismatch: {what} has length {got}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    /// The training loss left the reals; aborting with context.
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    /// Images handed to a metric do not share dimensions.
    #[error("dimension mismatch: {a_w}x{a_h} vs {b_w}x{b_h}{context}")]
    DimensionMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
        context: String,
    },

    /// Too few associated samples to compute a trajectory metric.
    #[error("too few matched samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    /// Point set is (near) collinear; rotation estimate is rank-deficient.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Invalid configuration, with a field-level message.
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user configuration rather than runtime math.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
