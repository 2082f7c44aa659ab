use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid resampling factor {0} (must be >= 2)")]
    InvalidFactor(usize),

    #[error("dims {dims:?} are not divisible by {divisor}")]
    NonDivisibleDims { dims: [usize; 3], divisor: usize },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("degenerate value range: min {min} equals max {max}")]
    DegenerateRange { min: f64, max: f64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("file {path:?} holds {actual} values, expected {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("missing sidecar metadata {0:?}")]
    MissingSidecar(PathBuf),

    #[error("unsupported dtype {0:?} (only float32 is supported)")]
    UnsupportedDType(String),

    #[error("unknown synthetic field kind {0:?}")]
    UnknownKind(String),

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("empty series")]
    EmptySeries,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty point set")]
    EmptyPointSet,

    #[error("no seed points")]
    EmptySeeds,

    #[error("invalid number of diffusion steps {0}")]
    InvalidT(usize),

    #[error("timestep {t} outside [1, {max}]")]
    BadTimestep { t: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("too few frames to split: {0}")]
    TooFewFrames(usize),

    #[error("shape incompatible: {0}")]
    ShapeIncompatible(String),

    #[error("non-finite {stage} loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, stage: String },

    #[error("checkpoint phase is {actual}, expected {expected}")]
    WrongPhase { expected: String, actual: String },

    #[error("timestep {0} is not present in the LR series")]
    IndexMismatch(i64),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("frame count mismatch: {truth} truth frames vs {recon} reconstructed")]
    FrameCountMismatch { truth: usize, recon: usize },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
