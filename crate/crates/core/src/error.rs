use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DdsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DdsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{context}: non-finite value")]
    NonFinite { context: &'static str },

    #[error("backward root must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("latent dimension {actual} does not match generator dimension {expected}")]
    LatentDim { expected: usize, actual: usize },

    #[error("invalid part selector {0}")]
    InvalidPart(String),

    #[error("channel {channel} out of range for {channels}-channel image")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("layer extent {layer}x{layer_w} does not evenly divide mask extent {mask}x{mask_w}")]
    NonDivisible {
        layer: usize,
        layer_w: usize,
        mask: usize,
        mask_w: usize,
    },

    #[error("pyramid has {pyramid} levels but feature stack has {features}")]
    PyramidMismatch { pyramid: usize, features: usize },

    #[error("unsupported generator kind for {0}")]
    UnsupportedGenerator(&'static str),

    #[error("unknown backbone '{0}'")]
    UnknownBackbone(String),

    #[error(
        "non-finite loss at iteration {iteration}: L_s={source_loss}, L_t={target_loss}, L_c={crossover_loss}"
    )]
    NonFiniteLoss {
        iteration: usize,
        source_loss: f64,
        target_loss: f64,
        crossover_loss: f64,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("need at least 2 samples for covariance, got {0}")]
    TooFewSamples(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("weight manifest: {0}")]
    Manifest(String),

    #[error("png {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
