//! Adversarial and content losses, each returned together with the
//! gradient of the loss with respect to its tensor input.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActKind, Block, Conv2d, ConvSpec, Layer, Mode, Network};
use crate::tensor::Tensor;

/// Weight of the content term in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub omega: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { omega: 10.0 }
    }
}

/// Weights of the three discriminator terms (cartoon, edge-smoothed,
/// generated). Setting `smoothed` to zero ablates the edge-smoothed term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialWeights {
    pub cartoon: f64,
    pub smoothed: f64,
    pub generated: f64,
}

impl Default for AdversarialWeights {
    fn default() -> Self {
        Self {
            cartoon: 1.0,
            smoothed: 1.0,
            generated: 1.0,
        }
    }
}

/// A scalar loss and its gradient with respect to one input tensor.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

/// `softplus(z) = ln(1 + e^z)`, evaluated without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits against a constant target.
/// Target 1 costs `softplus(-z)`, target 0 costs `softplus(z)`.
pub fn bce_logits(logits: &Tensor, target: bool) -> Result<LossGrad> {
    if !logits.all_finite() {
        return Err(Error::NonFinite("bce_logits input".to_string()));
    }
    let n = logits.len() as f64;
    let sign = if target { -1.0 } else { 1.0 };
    let mut value = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for (g, &z) in grad.data_mut().iter_mut().zip(logits.data()) {
        let s = sign * z as f64;
        value += softplus(s);
        *g = (sign * sigmoid(s) / n) as f32;
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Gradients of the discriminator objective with respect to its three
/// logit maps.
#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    pub value: f64,
    pub grad_cartoon: Tensor,
    pub grad_smoothed: Tensor,
    pub grad_generated: Tensor,
}

/// `w_c * bce(d_c, 1) + w_e * bce(d_e, 0) + w_g * bce(d_gp, 0)`.
pub fn adversarial_loss_d_weighted(
    d_c: &Tensor,
    d_e: &Tensor,
    d_gp: &Tensor,
    w: &AdversarialWeights,
) -> Result<DiscriminatorLoss> {
    d_c.ensure_same_shape(d_e, "adversarial_loss_d")?;
    d_c.ensure_same_shape(d_gp, "adversarial_loss_d")?;
    let c = bce_logits(d_c, true)?;
    let e = bce_logits(d_e, false)?;
    let g = bce_logits(d_gp, false)?;
    Ok(DiscriminatorLoss {
        value: w.cartoon * c.value + w.smoothed * e.value + w.generated * g.value,
        grad_cartoon: c.grad.scale(w.cartoon as f32),
        grad_smoothed: e.grad.scale(w.smoothed as f32),
        grad_generated: g.grad.scale(w.generated as f32),
    })
}

pub fn adversarial_loss_d(d_c: &Tensor, d_e: &Tensor, d_gp: &Tensor) -> Result<DiscriminatorLoss> {
    adversarial_loss_d_weighted(d_c, d_e, d_gp, &AdversarialWeights::default())
}

/// Non-saturating generator objective `bce(d_gp, 1)`.
pub fn adversarial_loss_g(d_gp: &Tensor) -> Result<LossGrad> {
    bce_logits(d_gp, true)
}

/// `adv + omega * con`.
pub fn total_loss(adv: f64, con: f64, w: &LossWeights) -> f64 {
    adv + w.omega * con
}

/// Frozen convolutional stack whose responses define the content loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    net: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub channels: [usize; 4],
    pub strides: [usize; 4],
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 256],
            strides: [1, 2, 2, 2],
        }
    }
}

impl FeatureExtractor {
    /// Seeded-random weights (fan-in scaled normal, zero bias).
    pub fn seeded(config: ExtractorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 3;
        let blocks = config
            .channels
            .iter()
            .zip(config.strides)
            .enumerate()
            .map(|(i, (&n, s))| {
                let conv = Conv2d::new(in_c, ConvSpec::new(3, n, s, 1), &mut rng);
                in_c = n;
                Block::plain(
                    format!("stage{}", i + 1),
                    alloc::vec![
                        ("conv".to_string(), Layer::Conv(conv)),
                        ("lrelu".to_string(), Layer::Act(ActKind::lrelu())),
                    ],
                )
            })
            .collect();
        Self {
            net: Network::new(blocks),
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Mutable access for loading pretrained weights.
    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn features(&mut self, x: &Tensor) -> Result<Tensor> {
        // No normalization layers, so the mode only matters nominally.
        self.net.infer(x, Mode::Eval)
    }

    /// Mean absolute feature difference between `p` and `gp`, with the
    /// gradient with respect to `gp`. The subgradient of `|.|` at 0 is 0.
    pub fn content_loss(&mut self, p: &Tensor, gp: &Tensor) -> Result<LossGrad> {
        p.ensure_same_shape(gp, "content_loss")?;
        let net = &mut self.net;
        let fp = net.infer(p, Mode::Eval)?;
        let (fgp, tape) = net.forward(gp, Mode::Eval)?;
        let n = fp.len() as f64;
        let mut value = 0.0;
        let mut dfeat = Tensor::zeros(fgp.shape());
        for ((g, &a), &b) in dfeat.data_mut().iter_mut().zip(fgp.data()).zip(fp.data()) {
            let d = a as f64 - b as f64;
            value += d.abs();
            *g = if d > 0.0 {
                (1.0 / n) as f32
            } else if d < 0.0 {
                (-1.0 / n) as f32
            } else {
                0.0
            };
        }
        let grad = net.backward(&tape, &dfeat, false)?;
        Ok(LossGrad {
            value: value / n,
            grad,
        })
    }

    pub fn flat_values(&self) -> Vec<f32> {
        self.net.flat_values()
    }
}

pub fn content_loss(f: &mut FeatureExtractor, p: &Tensor, gp: &Tensor) -> Result<LossGrad> {
    f.content_loss(p, gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bce_at_zero_is_ln2() {
        let z = Tensor::zeros([2, 1, 3, 3]);
        for t in [true, false] {
            let l = bce_logits(&z, t).unwrap();
            assert!((l.value - core::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_is_stable_at_extremes() {
        let z = Tensor::from_vec([1, 1, 1, 2], alloc::vec![100.0, -100.0]).unwrap();
        for t in [true, false] {
            let l = bce_logits(&z, t).unwrap();
            assert!(l.value.is_finite() && l.grad.all_finite());
            assert!((l.value - 50.0).abs() < 1e-9);
        }
        let big = Tensor::full([1, 1, 1, 1], 80.0);
        assert!(bce_logits(&big, true).unwrap().value < 1e-30);
    }

    #[test]
    fn discriminator_loss_values() {
        let z = Tensor::zeros([1, 1, 2, 2]);
        let l = adversarial_loss_d(&z, &z, &z).unwrap();
        assert!((l.value - 3.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let pos = Tensor::full([1, 1, 2, 2], 60.0);
        let neg = Tensor::full([1, 1, 2, 2], -60.0);
        assert!(adversarial_loss_d(&pos, &neg, &neg).unwrap().value < 1e-20);
        assert!(adversarial_loss_d(&z, &Tensor::zeros([1, 1, 3, 3]), &z).is_err());
    }

    #[test]
    fn generator_loss_decreases_with_logit() {
        let mut prev = f64::INFINITY;
        for i in -10..=10 {
            let l = adversarial_loss_g(&Tensor::full([1, 1, 1, 1], i as f32)).unwrap();
            assert!(l.value < prev);
            prev = l.value;
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.5, 0.2, &w), 2.5);
        assert_eq!(total_loss(0.5, 0.2, &LossWeights { omega: 0.0 }), 0.5);
        assert_eq!(total_loss(0.5, 0.0, &w), 0.5);
    }

    #[test]
    fn content_loss_identity_and_symmetry() {
        let mut f = FeatureExtractor::seeded(ExtractorConfig::default(), 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = Tensor::uniform([1, 3, 16, 16], -1.0, 1.0, &mut rng);
        let q = Tensor::uniform([1, 3, 16, 16], -1.0, 1.0, &mut rng);
        assert_eq!(content_loss(&mut f, &p, &p).unwrap().value, 0.0);
        let a = content_loss(&mut f, &p, &q).unwrap().value;
        let b = content_loss(&mut f, &q, &p).unwrap().value;
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}
