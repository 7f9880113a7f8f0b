use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FcnaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FcnaError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch { op: &'static str, expected: String, got: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("input too small at layer {layer}: extent {extent} with padding {pad} is smaller than kernel {kernel}")]
    LayerInputTooSmall { layer: String, extent: usize, kernel: usize, pad: usize },

    #[error("input too small: {height}x{width} is below the minimum input size {min}")]
    InputTooSmall { height: usize, width: usize, min: usize },

    #[error("train crop {crop} is below the minimum input size {min} of the derived stack")]
    CropBelowMinimum { crop: usize, min: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("backward requires a train-mode forward cache")]
    EvalModeCache,

    #[error("bad magic bytes in checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("checkpoint disagrees with its embedded spec: {0}")]
    CheckpointShape(String),

    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("class {class} has {count} records, below the floor of {floor}")]
    ClassTooSmall { class: String, count: usize, floor: usize },

    #[error("image {record} is {height}x{width}, smaller than crop {crop}")]
    ImageSmallerThanCrop { record: String, height: usize, width: usize, crop: usize },

    #[error("refusing to upsample {path}: long side {long_side} is below scale {scale}")]
    UpsampleRefused { path: String, long_side: u32, scale: u32 },

    #[error("class {0} has no records in the evaluated split")]
    EmptyClass(usize),

    #[error("correlation undefined between scales {a} and {b}: constant accuracy vector")]
    UndefinedCorrelation { a: u32, b: u32 },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("report parse error at line {line}: {message}")]
    ReportParse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl FcnaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcnaError::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        FcnaError::ShapeMismatch { op, expected: expected.to_string(), got: got.to_string() }
    }
}
