use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("palette size {got} does not match the trained size {expected}")]
    PaletteSize { expected: usize, got: usize },

    #[error("alpha stack is not normalized: pixel {pixel} sums to {sum}")]
    NotNormalized { pixel: usize, sum: f32 },

    #[error("layer index {index} out of range for {k} layers")]
    LayerIndex { index: usize, k: usize },

    #[error("palette parse error on line {line}: {message}")]
    PaletteParse { line: usize, message: String },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("weight container: {0}")]
    Weights(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
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
