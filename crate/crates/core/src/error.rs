use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied value failed validation. `field` names the offender.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("direction is not unit length (norm {norm})")]
    NonUnitDirection { norm: f64 },

    #[error("density undefined for zero coefficient vector")]
    ZeroCoefficients,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("fit diverged at step {step}")]
    Diverged { step: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("primitive {index} is tagged {found:?}, expected {expected:?}")]
    WrongTag {
        index: usize,
        found: crate::scene::NodeTag,
        expected: crate::scene::NodeTag,
    },

    #[error("pseudo ground-truth provider failed on view {view_id}: {reason}")]
    Provider { view_id: usize, reason: String },

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from bad user input rather than an internal failure.
    pub fn is_bad_input(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Version { .. }
                | Error::Malformed { .. }
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::Image { .. }
                | Error::Empty(_)
        )
    }
}
