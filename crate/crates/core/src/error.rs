use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite values produced by {layer}")]
    NumericFailure { layer: String },
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("bitstream error: {0}")]
    Bitstream(String),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("rd curves do not overlap in PSNR: {0}")]
    NoOverlap(String),
    #[error("target {target:.5} bpp outside achievable range [{min:.5}, {max:.5}]")]
    RateOutOfRange { target: f64, min: f64, max: f64 },
    #[error("non-monotone rate trace: {0}")]
    NonMonotone(String),
    #[error("external coder: {0}")]
    External(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_frame(self, index: usize) -> Error {
        match self {
            e @ Error::Frame { .. } => e,
            e => Error::Frame {
                index,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
