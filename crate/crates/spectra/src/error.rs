use std::path::PathBuf;

use crate::neta::NetaError;

/// Failures of a pipeline command. Each maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Archive { path: PathBuf, source: NetaError },
    #[error("input format: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate normalization: {0}")]
    Degenerate(String),
    #[error("insufficient alignment samples: {0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Core(#[from] spectra_core::Error),
}

pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const IO: u8 = 1;
    pub const INPUT_FORMAT: u8 = 2;
    pub const SHAPE_MISMATCH: u8 = 3;
    pub const DEGENERATE: u8 = 4;
    pub const INSUFFICIENT_SAMPLES: u8 = 5;
}

impl PipelineError {
    pub fn exit_code(&self) -> u8 {
        use spectra_core::Error as E;
        match self {
            PipelineError::Io { .. } => exit::IO,
            PipelineError::Archive {
                source: NetaError::Io(_),
                ..
            } => exit::IO,
            PipelineError::Archive { .. } | PipelineError::Format(_) => exit::INPUT_FORMAT,
            PipelineError::ShapeMismatch(_) => exit::SHAPE_MISMATCH,
            PipelineError::Degenerate(_) => exit::DEGENERATE,
            PipelineError::InsufficientSamples(_) => exit::INSUFFICIENT_SAMPLES,
            PipelineError::Core(E::DimensionMismatch { .. } | E::NotSquare { .. }) => exit::SHAPE_MISMATCH,
            PipelineError::Core(E::DegenerateNormalization { .. } | E::ZeroTrace | E::UndefinedRank) => {
                exit::DEGENERATE
            }
            PipelineError::Core(_) => exit::INPUT_FORMAT,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }

    pub fn archive(path: impl Into<PathBuf>) -> impl FnOnce(NetaError) -> Self {
        let path = path.into();
        move |source| PipelineError::Archive { path, source }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
