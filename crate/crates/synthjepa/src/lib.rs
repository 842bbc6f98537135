//! File formats, run configuration and experiment orchestration for the
//! synthetic multimodal JEPA study. The numerics, data generator, model and
//! training loops live in `synthjepa-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod reports;

pub use error::{Error, Result};
pub use synthjepa_core as core;
