use alloc::vec;
use alloc::vec::Vec;

use super::param::Parameter;
use super::Mode;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Running statistics follow the exponential update
/// `r <- (1 - momentum) * r + momentum * batch_stat`, with the unbiased
/// batch variance feeding `running_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Values saved by [`BatchNorm2d::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full([1, channels, 1, 1], 1.0)),
            beta: Parameter::new(Tensor::zeros([1, channels, 1, 1])),
            running_mean: Tensor::zeros([1, channels, 1, 1]),
            running_var: Tensor::full([1, channels, 1, 1], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, NormCache)> {
        let s = x.shape();
        let c_count = self.channels();
        if s.c != c_count {
            return Err(shape_err(
                "batch_norm2d",
                alloc::format!("{c_count} channels"),
                alloc::format!("{} channels", s.c),
            ));
        }
        let plane = s.plane();
        let count = s.n * plane;
        let batch_stats = !matches!(mode, Mode::Eval);
        if batch_stats && count < 2 {
            return Err(Error::DegenerateBatch("batch_norm2d"));
        }

        let mut mean = vec![0.0f64; c_count];
        let mut var = vec![0.0f64; c_count];
        if batch_stats {
            for n in 0..s.n {
                for (c, m) in mean.iter_mut().enumerate() {
                    let off = (n * s.c + c) * plane;
                    *m += x.data()[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for n in 0..s.n {
                for (c, vv) in var.iter_mut().enumerate() {
                    let off = (n * s.c + c) * plane;
                    let m = mean[c];
                    *vv += x.data()[off..off + plane]
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - m;
                            d * d
                        })
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            if matches!(mode, Mode::Train) {
                let unbias = count as f64 / (count - 1) as f64;
                for c in 0..c_count {
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = ((1.0 - BN_MOMENTUM) * *rm as f64 + BN_MOMENTUM * mean[c]) as f32;
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = ((1.0 - BN_MOMENTUM) * *rv as f64 + BN_MOMENTUM * var[c] * unbias) as f32;
                }
            }
        } else {
            for c in 0..c_count {
                mean[c] = self.running_mean.data()[c] as f64;
                var[c] = self.running_var.data()[c] as f64;
            }
        }

        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / libm::sqrt(v + BN_EPS)) as f32)
            .collect();
        let mut xhat = Tensor::zeros(s);
        let mut y = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..c_count {
                let off = (n * s.c + c) * plane;
                let (m, is) = (mean[c] as f32, inv_std[c]);
                let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
                let src = &x.data()[off..off + plane];
                let xh = &mut xhat.data_mut()[off..off + plane];
                for (h, &v) in xh.iter_mut().zip(src) {
                    *h = (v - m) * is;
                }
                let dst = &mut y.data_mut()[off..off + plane];
                for (o, &h) in dst.iter_mut().zip(xh.iter()) {
                    *o = g * h + b;
                }
            }
        }
        Ok((
            y,
            NormCache {
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &NormCache,
        grad_out: &Tensor,
        param_grads: bool,
    ) -> Result<Tensor> {
        let s = grad_out.shape();
        cache.xhat.ensure_same_shape(grad_out, "batch_norm2d backward")?;
        let plane = s.plane();
        let count = (s.n * plane) as f64;
        let c_count = s.c;

        // Per-channel sums of dy and dy * xhat.
        let mut sum_dy = vec![0.0f64; c_count];
        let mut sum_dy_xhat = vec![0.0f64; c_count];
        for n in 0..s.n {
            for c in 0..c_count {
                let off = (n * s.c + c) * plane;
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                for (&g, &h) in dy.iter().zip(xh) {
                    sum_dy[c] += g as f64;
                    sum_dy_xhat[c] += g as f64 * h as f64;
                }
            }
        }
        if param_grads {
            for c in 0..c_count {
                self.gamma.grad.data_mut()[c] += sum_dy_xhat[c] as f32;
                self.beta.grad.data_mut()[c] += sum_dy[c] as f32;
            }
        }

        let mut gx = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..c_count {
                let off = (n * s.c + c) * plane;
                let g = self.gamma.value.data()[c];
                let is = cache.inv_std[c];
                let dy = &grad_out.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                let dx = &mut gx.data_mut()[off..off + plane];
                if cache.batch_stats {
                    let mdy = (sum_dy[c] / count) as f32;
                    let mdyx = (sum_dy_xhat[c] / count) as f32;
                    for ((o, &d), &h) in dx.iter_mut().zip(dy).zip(xh) {
                        *o = g * is * (d - mdy - h * mdyx);
                    }
                } else {
                    for (o, &d) in dx.iter_mut().zip(dy) {
                        *o = g * is * d;
                    }
                }
            }
        }
        Ok(gx)
    }
}
