use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrPolicy {
    Triangular,
}

/// Cyclic learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub max_lr: f64,
    pub half_cycle: u64,
    pub policy: LrPolicy,
}

impl LrSchedule {
    pub fn new(base_lr: f64, max_lr: f64, half_cycle: u64) -> Result<Self> {
        let s = Self {
            base_lr,
            max_lr,
            half_cycle,
            policy: LrPolicy::Triangular,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr) || self.half_cycle == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "lr schedule needs 0 < base_lr <= max_lr and half_cycle >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        cyclic_lr(step, self)
    }
}

/// Triangular wave: `base_lr` at multiples of `2 * half_cycle`, `max_lr`
/// at odd multiples of `half_cycle`, linear in between.
pub fn cyclic_lr(step: u64, sched: &LrSchedule) -> f64 {
    match sched.policy {
        LrPolicy::Triangular => {
            let h = sched.half_cycle;
            let pos = step % (2 * h);
            let rise = if pos <= h { pos } else { 2 * h - pos };
            sched.base_lr + (sched.max_lr - sched.base_lr) * (rise as f64 / h as f64)
        }
    }
}
