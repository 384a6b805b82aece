use alloc::string::ToString;

use super::param::Parameter;
use crate::error::{Error, Result};

/// AdamW hyper-parameters. The learning rate is supplied per step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    /// One decoupled-decay Adam update of `p` at rate `lr`.
    ///
    /// `value <- value - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * value`,
    /// with the decay term evaluated on the pre-update value. The gradient is
    /// left in place; callers zero it.
    pub fn step(&self, p: &mut Parameter, lr: f64, name: &str) -> Result<()> {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite(alloc::format!("gradient of `{name}`")));
        }
        p.step_count += 1;
        let t = p.step_count as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (lr * self.weight_decay) as f32;
        let grads = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for ((mi, vi), &g) in m.iter_mut().zip(v.iter_mut()).zip(grads) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((x, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi as f64 / bc1;
            let v_hat = vi as f64 / bc2;
            let update = (lr * m_hat / (libm::sqrt(v_hat) + self.eps)) as f32;
            *x = *x - update - decay * *x;
        }
        if !p.value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(())
    }
}

/// Free-function form of [`AdamW::step`].
pub fn adamw_step(p: &mut Parameter, lr: f64, hyper: &AdamW, name: &str) -> Result<()> {
    hyper.step(p, lr, name)
}
