//! Core of the synthetic multimodal JEPA laboratory.
//!
//! Everything in this crate is pure computation over in-memory data: a small
//! reverse-mode tensor engine, the latent-variable cohort generator, the
//! kernel-softness scorer, the multimodal encoder stack, JEPA pretraining,
//! supervised finetuning, and the evaluation oracles. File formats, the CLI
//! and parallel job scheduling live in the `synthjepa` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod finetune;
pub mod image;
pub mod jepa;
pub mod kernelscore;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synthcohort;

pub use error::{Error, Result};
