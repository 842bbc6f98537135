use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::graph::Gradients;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAG: AtomicU32 = AtomicU32::new(1);

fn fresh_tag() -> u32 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its accumulated gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<S> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub adam_m: Tensor<S>,
    pub adam_v: Tensor<S>,
    pub step_count: u64,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }
}

/// Named, ordered collection of parameters.
///
/// Every store carries a process-unique tag; gradients recorded on a graph
/// remember which store each parameter leaf came from, so a store only ever
/// absorbs gradients of its own parameters.
#[derive(Debug)]
pub struct ParamStore<S> {
    tag: u32,
    names: Vec<String>,
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Clone for ParamStore<S> {
    /// The copy gets a fresh tag: gradients recorded against the original
    /// never land in the copy.
    fn clone(&self) -> Self {
        Self { tag: fresh_tag(), names: self.names.clone(), params: self.params.clone() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { tag: fresh_tag(), names: Vec::new(), params: Vec::new() }
    }

    pub(crate) fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.params.push(Parameter::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<S>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<S>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter_mut())
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds the gradients recorded for this store. Returns how many
    /// parameters received a contribution.
    pub fn accumulate(&mut self, grads: &Gradients<S>) -> usize {
        let mut touched = 0;
        for (tag, id, g) in grads.entries() {
            if tag == self.tag {
                self.params[id.0].grad.add_assign(g);
                touched += 1;
            }
        }
        touched
    }

    /// L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        let total = self.params.iter().map(|p| p.grad.sq_norm().as_f64()).sum::<f64>();
        libm::sqrt(total)
    }

    /// Checks that `other` has the same names and shapes, in the same order.
    pub fn check_same_structure(&self, other: &Self) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Structure(format!("{} parameters vs {}", self.params.len(), other.params.len())));
        }
        for (i, (a, b)) in self.params.iter().zip(&other.params).enumerate() {
            if self.names[i] != other.names[i] || a.value.shape() != b.value.shape() {
                return Err(Error::Structure(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    self.names[i],
                    a.value.shape(),
                    other.names[i],
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Overwrites values (not gradients or optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &Self) -> Result<()> {
        self.check_same_structure(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }

    /// Resets gradients and Adam state, keeping values.
    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            let shape = p.value.shape().to_vec();
            p.grad = Tensor::zeros(&shape);
            p.adam_m = Tensor::zeros(&shape);
            p.adam_v = Tensor::zeros(&shape);
            p.step_count = 0;
        }
    }

    /// Converts element type, dropping optimizer state.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            tag: fresh_tag(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| Parameter::new(p.value.cast())).collect(),
        }
    }

    /// True when values of every parameter are bitwise identical.
    pub fn values_equal(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits_eq(*y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<S: Scalar> BitsEq for S {
    fn to_bits_eq(self, other: Self) -> bool {
        // Values are finite by construction, so equality plus sign of zero
        // decides bitwise identity.
        self == other && self.is_sign_negative() == other.is_sign_negative()
    }
}
