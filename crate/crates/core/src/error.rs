use thiserror::Error;

/// Errors produced by the selection, loss, augmentation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty logits")]
    EmptyLogits,

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("k = {k} out of range for {len} logits")]
    KOutOfRange { k: usize, len: usize },

    #[error("degenerate grid: divider needs at least 2 cells, got {0}")]
    DegenerateGrid(usize),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing P2 row in calibration")]
    MissingP2,

    #[error("point is behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    ImageDimensions(u32, u32, u32, u32),

    #[error("mix proportion must lie strictly inside (0, 1), got {0}")]
    InvalidLambda(f64),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
