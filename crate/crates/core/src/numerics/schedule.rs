use core::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

static OVERRUN_WARNED: AtomicBool = AtomicBool::new(false);

/// Cosine annealing from `lr_max` to `lr_min` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> crate::Result<Self> {
        let s = Self { lr_max, lr_min, total_steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.lr_max > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr_max || self.total_steps == 0 {
            return Err(crate::Error::Config(alloc::format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        cosine_lr(step, self)
    }

    /// Same shape with every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { lr_max: self.lr_max * factor, lr_min: self.lr_min * factor, total_steps: self.total_steps }
    }
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2`; steps past
/// the end clamp to `lr_min` with a one-time warning.
pub fn cosine_lr(step: u64, schedule: &LrSchedule) -> f64 {
    if step > schedule.total_steps {
        if !OVERRUN_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("lr schedule queried at step {step} beyond {}; clamping", schedule.total_steps);
        }
        return schedule.lr_min;
    }
    if step == schedule.total_steps {
        return schedule.lr_min;
    }
    let frac = step as f64 / schedule.total_steps as f64;
    schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + libm::cos(core::f64::consts::PI * frac))
}
