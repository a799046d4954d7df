use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::vocab::VocabSpace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image {height}x{width} is not divisible by patch size {patch_size}")]
    NotDivisible {
        height: usize,
        width: usize,
        patch_size: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("corpus has {available} patches but {requested} visual words were requested")]
    InsufficientPatches { available: usize, requested: usize },

    #[error(
        "corpus has only {distinct} distinct patches, fewer than the {requested} requested visual words"
    )]
    InsufficientDistinct { distinct: usize, requested: usize },

    #[error("vocabulary space mismatch: expected {expected}, found {found}")]
    SpaceMismatch {
        expected: VocabSpace,
        found: VocabSpace,
    },

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sample {0:?} has no subgroup label")]
    MissingLabel(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case tag for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Corrupt(_) => "corrupt",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::InvalidImage(_) => "invalid_image",
            Error::NotDivisible { .. } => "not_divisible",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InsufficientPatches { .. } => "insufficient_patches",
            Error::InsufficientDistinct { .. } => "insufficient_distinct",
            Error::SpaceMismatch { .. } => "space_mismatch",
            Error::ModeMismatch(_) => "mode_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NonFinite { .. } => "non_finite",
            Error::Empty(_) => "empty",
            Error::MissingLabel(_) => "missing_label",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
