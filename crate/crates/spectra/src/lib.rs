//! File formats, reports and the command-line pipeline around
//! [`spectra_core`].

pub mod error;
pub mod export;
pub mod neta;
pub mod pipeline;
pub mod report;

pub use error::{PipelineError, Result};
pub use neta::{read_archive, write_archive, DType, Tensor, TensorArchive, TensorData};
pub use pipeline::{cmd_compare, cmd_spatial, cmd_synth, CompareConfig, SpatialConfig, SynthConfig};
