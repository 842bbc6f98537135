use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("parameter structure mismatch: {0}")]
    Structure(String),
    #[error("image too small: {height}x{width}, need at least {min} on each side")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("scored set needs at least one positive and one negative")]
    DegenerateLabels,
    #[error("dataset `{0}` carries no labels")]
    Unlabeled(String),
    #[error("non-finite loss at batch position {subject_index}")]
    NonFiniteLoss { subject_index: usize, losses: Vec<f64> },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
