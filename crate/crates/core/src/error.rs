use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask {id} is empty")]
    EmptyMask { id: u32 },

    #[error("incompatible masks: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("duplicate mask id {0}")]
    DuplicateMaskId(u32),

    #[error("grid data has {got} cells, expected {expected}")]
    GridLength { expected: usize, got: usize },

    #[error("run-length encoding covers {got} pixels, expected {expected}")]
    RleLength { expected: usize, got: usize },

    #[error("buffer ratio must be a finite non-negative number, got {0}")]
    InvalidRatio(f64),

    #[error("unknown crop variant `{0}`")]
    UnknownCropVariant(String),

    #[error("unusable expression: {0:?}")]
    UnusableExpression(String),

    #[error("expression {0:?} has no retained tokens")]
    EmptyExpression(String),

    #[error("expression {0:?} has no usable class word")]
    NoClassWord(String),

    #[error("class word(s) {tokens:?} match no class in the vocabulary")]
    NoClassMatch { tokens: Vec<String> },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("bank configuration error at `{key}`: {reason}")]
    BankConfig { key: String, reason: String },

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    VectorDim { expected: usize, got: usize },

    #[error("zero-norm {what} at row {row}")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("encoder backend failed on item {index}: {message}")]
    Backend { index: usize, message: String },

    #[error("token {0:?} missing from saliency output")]
    MissingToken(String),

    #[error("map shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("mask {mask_id}: {source}")]
    ForMask {
        mask_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("labels do not cover the mask set: {0}")]
    LabelCoverage(String),

    #[error("image {image_id}: {reason}")]
    Image { image_id: String, reason: String },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("tensor container {path}: {reason}")]
    Tensor { path: PathBuf, reason: String },

    #[error(
        "result and ground-truth ids differ: missing results {missing_results:?}, missing ground truth {missing_gt:?}"
    )]
    IdMismatch {
        missing_results: Vec<String>,
        missing_gt: Vec<String>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene error: {0}")]
    Scene(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn for_mask(self, mask_id: u32) -> Self {
        Error::ForMask {
            mask_id,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
