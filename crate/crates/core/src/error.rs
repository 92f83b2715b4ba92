use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the alignment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z:e})")]
    BehindCamera { z: f64 },

    #[error("every mesh vertex is behind the camera")]
    AllBehindCamera,

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} is degenerate (area {area:e} m^2)")]
    DegenerateFace { face: usize, area: f64 },

    #[error("face {face} references vertex index {index} but only {count} vertices exist")]
    IndexOutOfRange { face: usize, index: i64, count: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input list")]
    EmptyList,

    #[error("unknown feature extractor `{0}`")]
    UnknownExtractor(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },

    #[error("all {0} frames failed")]
    AllFramesFailed(usize),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("PNG decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("PNG encode error: {0}")]
    PngEncode(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
