//! Direct-loop `f64` forward evaluation of the layer set.
//!
//! Shares no code with the im2col/GEMM path: convolutions are written as
//! explicit sums over taps, transposed convolutions as explicit scatters.
//! Activation and absolute-value sign patterns are folded into a
//! [`Branches`] hash so finite differences can tell when a perturbation
//! crossed a kink.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::nn::{ActKind, BlockKind, ConvSpec, Layer, Mode, Network, BN_EPS};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RefTensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    #[inline]
    fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn dot(&self, r: &Tensor) -> Result<f64> {
        if self.shape != r.shape() {
            return Err(shape_err("RefTensor::dot", self.shape, r.shape()));
        }
        Ok(self.data.iter().zip(r.data()).map(|(a, &b)| a * b as f64).sum())
    }

    pub fn max_abs_diff(&self, t: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(t.data())
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// FNV-1a over the sign bits seen during an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branches(u64);

impl Default for Branches {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Branches {
    #[inline]
    pub fn push(&mut self, negative: bool) {
        self.0 ^= negative as u64 + 1;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

pub fn conv2d(x: &RefTensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<RefTensor> {
    let xs = x.shape;
    let ho = spec.conv_out(xs.h)?;
    let wo = spec.conv_out(xs.w)?;
    let n_out = spec.out_channels;
    let k = spec.kernel;
    if w.shape() != Shape::new(n_out, xs.c, k, k) {
        return Err(shape_err("reference conv2d", Shape::new(n_out, xs.c, k, k), w.shape()));
    }
    let mut out = RefTensor::zeros(Shape::new(xs.n, n_out, ho, wo));
    for n in 0..xs.n {
        for o in 0..n_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o] as f64;
                    for c in 0..xs.c {
                        for ky in 0..k {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(o, c, ky, kx) as f64
                                    * x.data[x.idx(n, c, iy as usize, ix as usize)];
                            }
                        }
                    }
                    let i = out.idx(n, o, oy, ox);
                    out.data[i] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d(
    x: &RefTensor,
    w: &Tensor,
    b: &Tensor,
    spec: &ConvSpec,
    output_padding: usize,
) -> Result<RefTensor> {
    let xs = x.shape;
    let ho = spec.conv_transpose_out(xs.h, output_padding)?;
    let wo = spec.conv_transpose_out(xs.w, output_padding)?;
    let n_out = spec.out_channels;
    let k = spec.kernel;
    if w.shape() != Shape::new(xs.c, n_out, k, k) {
        return Err(shape_err(
            "reference conv_transpose2d",
            Shape::new(xs.c, n_out, k, k),
            w.shape(),
        ));
    }
    let mut out = RefTensor::zeros(Shape::new(xs.n, n_out, ho, wo));
    for n in 0..xs.n {
        for o in 0..n_out {
            for y in 0..ho {
                for xx in 0..wo {
                    let i = out.idx(n, o, y, xx);
                    out.data[i] = b.data()[o] as f64;
                }
            }
        }
        for c in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = x.data[x.idx(n, c, iy, ix)];
                    for o in 0..n_out {
                        for ky in 0..k {
                            let oy = (iy * spec.stride + ky) as isize - spec.padding as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * spec.stride + kx) as isize - spec.padding as isize;
                                if ox < 0 || ox >= wo as isize {
                                    continue;
                                }
                                let i = out.idx(n, o, oy as usize, ox as usize);
                                out.data[i] += v * w.at(c, o, ky, kx) as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn batch_norm(
    x: &RefTensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
) -> RefTensor {
    let s = x.shape;
    let m = (s.n * s.h * s.w) as f64;
    let mut out = RefTensor::zeros(s);
    for c in 0..s.c {
        let vals = || {
            (0..s.n).flat_map(move |n| {
                (0..s.h).flat_map(move |h| (0..s.w).map(move |w| x.data[x.idx(n, c, h, w)]))
            })
        };
        let (mean, var) = if mode == Mode::Eval {
            (running_mean.data()[c] as f64, running_var.data()[c] as f64)
        } else {
            let mean = vals().sum::<f64>() / m;
            (mean, vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m)
        };
        let scale = gamma.data()[c] as f64 / libm::sqrt(var + BN_EPS);
        for n in 0..s.n {
            for h in 0..s.h {
                for w in 0..s.w {
                    let i = x.idx(n, c, h, w);
                    out.data[i] = (x.data[i] - mean) * scale + beta.data()[c] as f64;
                }
            }
        }
    }
    out
}

pub fn activation(x: &RefTensor, kind: ActKind, branches: &mut Branches) -> RefTensor {
    let slope = match kind {
        ActKind::Relu => 0.0,
        ActKind::LeakyRelu(a) => a as f64,
    };
    RefTensor {
        shape: x.shape,
        data: x
            .data
            .iter()
            .map(|&v| {
                branches.push(v < 0.0);
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            })
            .collect(),
    }
}

/// Evaluates `net` on `x`. Batch norm uses batch statistics unless `mode`
/// is [`Mode::Eval`]; running statistics are never modified.
pub fn network(net: &Network, x: &RefTensor, mode: Mode, branches: &mut Branches) -> Result<RefTensor> {
    let mut cur = x.clone();
    for block in &net.blocks {
        let input = cur.clone();
        for (_, layer) in &block.layers {
            cur = match layer {
                Layer::Conv(c) => conv2d(&cur, &c.weight.value, &c.bias.value, &c.spec)?,
                Layer::ConvTranspose(c) => conv_transpose2d(
                    &cur,
                    &c.weight.value,
                    &c.bias.value,
                    &c.spec,
                    c.output_padding,
                )?,
                Layer::Norm(bn) => batch_norm(
                    &cur,
                    &bn.gamma.value,
                    &bn.beta.value,
                    &bn.running_mean,
                    &bn.running_var,
                    mode,
                ),
                Layer::Act(kind) => activation(&cur, *kind, branches),
            };
        }
        if block.kind == BlockKind::Residual {
            for (a, b) in cur.data.iter_mut().zip(&input.data) {
                *a += b;
            }
        }
    }
    Ok(cur)
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

pub fn bce_logits(logits: &RefTensor, target: bool) -> f64 {
    let sign = if target { -1.0 } else { 1.0 };
    logits.data.iter().map(|&z| softplus(sign * z)).sum::<f64>() / logits.data.len() as f64
}

/// Mean absolute difference, recording the sign of every difference.
pub fn mean_abs_diff(a: &RefTensor, b: &RefTensor, branches: &mut Branches) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x - y;
            branches.push(d < 0.0);
            d.abs()
        })
        .sum::<f64>()
        / a.data.len() as f64
}
