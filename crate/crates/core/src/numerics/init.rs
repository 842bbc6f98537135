//! Weight initializers: Xavier-uniform for dense and convolution kernels,
//! N(0, 0.02) for embeddings, zeros for biases.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::scalar::Scalar;
use super::tensor::Tensor;

pub const EMBEDDING_STD: f64 = 0.02;

pub fn xavier_uniform<S: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::c(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn normal<S: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::c(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
