use std::path::PathBuf;

use crate::volume::{Dims, VoxelIndex};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch { expected: Dims, actual: Dims },

    #[error("voxel {index:?} is outside grid {dims:?}")]
    OutOfBounds { index: VoxelIndex, dims: Dims },

    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },

    #[error("malformed file {path}: field `{field}`: {message}")]
    Format {
        path: PathBuf,
        field: &'static str,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("truth mask is empty; sample a prompt with sample_seed_in_gland instead")]
    EmptyTruth,

    #[error("could not place lesion {lesion} inside the gland after {attempts} attempts")]
    Placement { lesion: usize, attempts: usize },

    #[error("episode already terminated at step {step}")]
    TerminalState { step: usize },

    #[error("numeric failure in {stage} at {at}: {message}")]
    Numeric {
        stage: &'static str,
        at: String,
        message: String,
    },
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad numbers rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
