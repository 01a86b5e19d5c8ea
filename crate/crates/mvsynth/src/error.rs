use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid camera extrinsics: {0}")]
    InvalidExtrinsics(String),

    #[error("invalid depth map: {0}")]
    InvalidDepth(String),

    #[error("unknown camera type `{0}`")]
    UnknownCameraType(String),

    #[error("shape violation: {0}")]
    ShapeViolation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate fundamental matrix: relative translation is zero")]
    DegenerateFundamental,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format in {path}: {reason}")]
    BadFormat { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it aborted.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
