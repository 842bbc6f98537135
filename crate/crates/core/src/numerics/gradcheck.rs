use alloc::vec::Vec;

use rand::seq::index::sample;

use super::graph::Gradients;
use super::params::ParamStore;
use super::scalar::Scalar;
use crate::error::Result;
use crate::rng;

/// Central-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    ThreePoint,
    /// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`; truncation error
    /// O(h^4), which allows a larger `h` and less round-off.
    FivePoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    pub stencil: Stencil,
    /// Coordinates probed per parameter; all of them when the parameter is
    /// at most this large.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-5, stencil: Stencil::ThreePoint, coords_per_param: 16, seed: 0 }
    }
}

/// Compares analytic gradients against central finite differences and
/// returns the worst relative error
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-12)`. A non-finite finite
/// difference counts as an infinite error.
///
/// `loss_fn` must be deterministic in the store's values and return the loss
/// together with the gradients of a backward pass.
pub fn grad_check<S, F>(store: &mut ParamStore<S>, mut loss_fn: F, cfg: GradCheckConfig) -> Result<f64>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>) -> Result<(f64, Gradients<S>)>,
{
    store.zero_grads();
    let (_, grads) = loss_fn(store)?;
    store.accumulate(&grads);
    let mut rng = rng::seeded(cfg.seed);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.coords_per_param).into_vec()
        };
        for c in coords {
            let analytic = store.grad(id).data()[c].as_f64();
            let orig = store.value(id).data()[c];
            let mut eval_at = |store: &mut ParamStore<S>, offset: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[c] = orig + S::c(offset);
                let v = loss_fn(store)?.0;
                store.value_mut(id).data_mut()[c] = orig;
                Ok(v)
            };
            let h = cfg.h;
            let d1 = eval_at(store, h)? - eval_at(store, -h)?;
            let fd = match cfg.stencil {
                Stencil::ThreePoint => d1 / (2.0 * h),
                Stencil::FivePoint => {
                    let d2 = eval_at(store, 2.0 * h)? - eval_at(store, -2.0 * h)?;
                    (8.0 * d1 - d2) / (12.0 * h)
                }
            };
            if !fd.is_finite() {
                return Ok(f64::INFINITY);
            }
            let denom = analytic.abs().max(fd.abs()).max(1e-12);
            worst = worst.max((analytic - fd).abs() / denom);
        }
    }
    store.zero_grads();
    Ok(worst)
}
