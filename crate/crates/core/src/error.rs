use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("maxpool2 needs even spatial dims, got {height}x{width}")]
    OddSpatial { height: usize, width: usize },

    #[error("invalid model spec at layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("unknown preset `{name}` (valid presets: {valid})")]
    UnknownPreset { name: String, valid: String },

    #[error("backward called without a captured forward pass")]
    NoForwardCache,

    #[error("not a CAMF0001 weight file")]
    WeightsMagic,

    #[error("weight file was written for a different model spec (file: `{found}`, expected: `{expected}`)")]
    WeightsSpecMismatch { expected: String, found: String },

    #[error("weight file truncated: {0}")]
    WeightsTruncated(String),

    #[error("weight file is corrupt: {0}")]
    WeightsCorrupt(String),

    #[error("label {label} at index {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),

    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("netpbm: unsupported magic {0:?} (expected P5 or P6)")]
    NetpbmMagic(String),

    #[error("netpbm: maxval {0} is not supported (only 255)")]
    NetpbmMaxval(u32),

    #[error("netpbm: pixel data too short ({found} of {expected} bytes)")]
    NetpbmShortData { expected: usize, found: usize },

    #[error("netpbm: malformed header: {0}")]
    NetpbmHeader(String),

    #[error("class {class} has {count} items; stratified split needs at least 3")]
    ClassTooSmall { class: usize, count: usize },

    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),

    #[error("layer {0} is not a convolution; CAM needs a convolutional feature map")]
    NotConvLayer(usize),

    #[error("closed-form Hessian is not valid here ({0}); use the finite-difference estimator")]
    FastPathIneligible(String),

    #[error("length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },

    #[error("class index {value} outside [0, {classes})")]
    ClassOutOfRange { value: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
