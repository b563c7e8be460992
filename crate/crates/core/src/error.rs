use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: unsupported image: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("{path}: malformed Radiance HDR file: {reason}")]
    Hdr { path: PathBuf, reason: String },
    #[error("invalid image data: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("perceptual weights: {0}")]
    Weights(String),
    #[error("non-finite loss at step {step} (epoch {epoch})")]
    NonFiniteLoss { step: u64, epoch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Self::ShapeMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    /// Errors caused by the user's configuration rather than by the run
    /// itself; the CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Dataset(_) | Self::InvalidArgument(_) | Self::Weights(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
