use alloc::string::ToString;

use super::params::ParamStore;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Adam with bias correction. No weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// Applies one update to every parameter of `store` from its accumulated
    /// gradient. Gradients are left in place; call `zero_grads` separately.
    pub fn step<S: Scalar>(&self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        for (name, p) in store.iter() {
            if !p.grad.all_finite() {
                return Err(Error::NonFiniteGrad(name.to_string()));
            }
        }
        let (b1, b2) = (S::c(self.beta1), S::c(self.beta2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let eps = S::c(self.eps);
        let lr = S::c(lr);
        for (_, p) in store.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = S::one() - b1.powi(t);
            let bc2 = S::one() - b2.powi(t);
            let grad = p.grad.data();
            let m = p.adam_m.data_mut();
            for (mv, &g) in m.iter_mut().zip(grad) {
                *mv = b1 * *mv + one_b1 * g;
            }
            let v = p.adam_v.data_mut();
            for (vv, &g) in v.iter_mut().zip(grad) {
                *vv = b2 * *vv + one_b2 * g * g;
            }
            let (m, v) = (p.adam_m.data(), p.adam_v.data());
            for ((x, &mv), &vv) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use alloc::vec;

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::numerics::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v));
        (s, id)
    }

    #[test]
    fn zero_grads_leave_values_unchanged() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let before = s.value(id).clone();
        for _ in 0..5 {
            Adam::default().step(&mut s, 0.1).unwrap();
        }
        assert_eq!(s.value(id), &before);
        assert_eq!(s.param(id).step_count, 5);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (mut s, id) = scalar_store(0.0);
        s.param_mut(id).grad.data_mut()[0] = 1.0;
        Adam::default().step(&mut s, 0.1).unwrap();
        // m = 0.1, v = 0.001; bias-corrected both are 1.
        let want = -0.1 * (1.0 / (1.0f64.sqrt() + 1e-8));
        assert!((s.value(id).data()[0] - want).abs() < 1e-15);
        // gradient is not consumed by the step
        assert_eq!(s.grad(id).data()[0], 1.0);
    }

    #[test]
    fn constant_gradient_displacement_converges_to_lr() {
        let (mut s, id) = scalar_store(0.0);
        let lr = 0.01;
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..100 {
            s.param_mut(id).grad.data_mut()[0] = 1.0;
            Adam::default().step(&mut s, lr).unwrap();
            let x = s.value(id).data()[0];
            last_step = x - prev;
            prev = x;
        }
        assert!((last_step + lr).abs() <= 0.01 * lr, "step {last_step}");
    }

    #[test]
    fn non_finite_grad_names_the_parameter() {
        let (mut s, id) = scalar_store(1.0);
        s.param_mut(id).grad.data_mut()[0] = f64::NAN;
        assert_eq!(Adam::default().step(&mut s, 0.1), Err(Error::NonFiniteGrad("w".into())));
        assert_eq!(s.value(id).data()[0], 1.0);
    }
}
