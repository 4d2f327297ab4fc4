use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the attribution engine.
///
/// Validation variants name the offending field so that a malformed bundle
/// can be fixed without re-reading the loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("missing file for `{field}`: {path}")]
    MissingFile { field: String, path: PathBuf },

    #[error("unsupported format version `{found}` (supported major version: {supported})")]
    UnsupportedVersion { found: String, supported: u32 },

    #[error("dimension mismatch in `{field}`: expected {expected}, found {actual}")]
    DimensionMismatch {
        field: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in `{field}` at flat index {index}")]
    NonFinite { field: String, index: usize },

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("mask {id} has resolution {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    MaskResolution {
        id: u32,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },

    #[error("token {position} (`{token}`) references mask {mask_id:?} which is not in the mask set")]
    MissingMask {
        position: usize,
        token: String,
        mask_id: Option<u32>,
    },

    #[error("target must be a generated token (position {position} is a prompt token)")]
    PromptTarget { position: usize },

    #[error("scaled image {width}x{height} at factor {scale} does not fit the {canvas_w}x{canvas_h} canvas")]
    DoesNotFit {
        scale: f64,
        width: u32,
        height: u32,
        canvas_w: u32,
        canvas_h: u32,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("all irrelevance weights are zero")]
    DegenerateWeights,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(
        field: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            field: field.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
