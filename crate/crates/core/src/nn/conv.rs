//! Strided 2-D convolution (cross-correlation, zero padding) and its
//! transpose, with analytic gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::gemm::{gemm, Lowering};
use super::param::Parameter;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Kernel side, output channels, stride and zero padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            out_channels,
            stride,
            padding,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs k, n, s >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((extent + 2*padding - k) / s) + 1`
    pub fn conv_out(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return Err(shape_err(
                "conv2d",
                format!("padded extent >= kernel {}", self.kernel),
                format!("padded extent {padded}"),
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// `(extent - 1)*s - 2*padding + k + output_padding`
    pub fn conv_transpose_out(&self, extent: usize, output_padding: usize) -> Result<usize> {
        let grown = (extent - 1) * self.stride + self.kernel + output_padding;
        if grown <= 2 * self.padding {
            return Err(shape_err(
                "conv_transpose2d",
                "positive output extent",
                format!("{grown} - 2*{}", self.padding),
            ));
        }
        Ok(grown - 2 * self.padding)
    }
}

fn check_conv_inputs(
    op: &'static str,
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    spec: &ConvSpec,
    transposed: bool,
) -> Result<()> {
    spec.validate()?;
    let ws = w.shape();
    let xs = x.shape();
    let expected_w = if transposed {
        Shape::new(xs.c, spec.out_channels, spec.kernel, spec.kernel)
    } else {
        Shape::new(spec.out_channels, xs.c, spec.kernel, spec.kernel)
    };
    if ws != expected_w {
        return Err(shape_err(op, format!("weight {expected_w}"), format!("weight {ws}")));
    }
    let expected_b = Shape::new(1, spec.out_channels, 1, 1);
    if b.shape() != expected_b {
        return Err(shape_err(op, format!("bias {expected_b}"), format!("bias {}", b.shape())));
    }
    Ok(())
}

fn conv_lowering(xs: Shape, spec: &ConvSpec) -> Result<Lowering> {
    Ok(Lowering {
        channels: xs.c,
        big_h: xs.h,
        big_w: xs.w,
        small_h: spec.conv_out(xs.h)?,
        small_w: spec.conv_out(xs.w)?,
        kernel: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    })
}

fn transpose_lowering(xs: Shape, spec: &ConvSpec, output_padding: usize) -> Result<Lowering> {
    Ok(Lowering {
        channels: spec.out_channels,
        big_h: spec.conv_transpose_out(xs.h, output_padding)?,
        big_w: spec.conv_transpose_out(xs.w, output_padding)?,
        small_h: xs.h,
        small_w: xs.w,
        kernel: spec.kernel,
        stride: spec.stride,
        pad: spec.padding,
    })
}

fn add_bias(out: &mut Tensor, b: &Tensor) {
    let s = out.shape();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let beta = b.data()[i % s.c];
        chunk.iter_mut().for_each(|v| *v += beta);
    }
}

fn bias_grad(grad_out: &Tensor, acc: &mut [f32]) {
    let s = grad_out.shape();
    for (i, chunk) in grad_out.data().chunks(s.plane()).enumerate() {
        let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
        acc[i % s.c] += sum as f32;
    }
}

/// Gradients of a convolution with respect to its input and, when
/// requested, its weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Forward convolution. `w` is `n x c_in x k x k`, `b` is `1 x n x 1 x 1`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    check_conv_inputs("conv2d", x, w, b, spec, false)?;
    let xs = x.shape();
    let low = conv_lowering(xs, spec)?;
    let mut out = Tensor::zeros([xs.n, spec.out_channels, low.small_h, low.small_w]);
    let mut cols = vec![0.0; low.rows() * low.cols()];
    for n in 0..xs.n {
        low.im2col(x.sample(n), &mut cols);
        gemm(
            spec.out_channels,
            low.rows(),
            low.cols(),
            w.data(),
            false,
            &cols,
            false,
            out.sample_mut(n),
            0.0,
        );
    }
    add_bias(&mut out, b);
    Ok(out)
}

/// Backward pass of [`conv2d`]. Parameter gradients are written into
/// `param_acc` (`(weight, bias)` accumulators) when it is `Some`.
pub(crate) fn conv2d_backward_into(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    param_acc: Option<(&mut [f32], &mut [f32])>,
) -> Result<Tensor> {
    let xs = x.shape();
    let low = conv_lowering(xs, spec)?;
    let expected = Shape::new(xs.n, spec.out_channels, low.small_h, low.small_w);
    if grad_out.shape() != expected {
        return Err(shape_err("conv2d backward", expected, grad_out.shape()));
    }
    let mut gx = Tensor::zeros(xs);
    let mut cols = vec![0.0; low.rows() * low.cols()];
    let mut gcols = vec![0.0; low.rows() * low.cols()];
    let mut param_acc = param_acc;
    for n in 0..xs.n {
        let go = grad_out.sample(n);
        if let Some((gw, _)) = param_acc.as_mut() {
            low.im2col(x.sample(n), &mut cols);
            // gw (n x rows) += go (n x cols) * cols^T
            gemm(spec.out_channels, low.cols(), low.rows(), go, false, &cols, true, gw, 1.0);
        }
        // gcols (rows x cols) = w^T (rows x n) * go (n x cols)
        gemm(low.rows(), spec.out_channels, low.cols(), w.data(), true, go, false, &mut gcols, 0.0);
        low.col2im(&gcols, gx.sample_mut(n));
    }
    if let Some((_, gb)) = param_acc {
        bias_grad(grad_out, gb);
    }
    Ok(gx)
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    param_grads: bool,
) -> Result<ConvGrads> {
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros([1, spec.out_channels, 1, 1]);
    let acc = param_grads.then_some((gw.data_mut(), gb.data_mut()));
    let input = conv2d_backward_into(x, w, spec, grad_out, acc)?;
    Ok(ConvGrads {
        input,
        weight: param_grads.then_some(gw),
        bias: param_grads.then_some(gb),
    })
}

/// Transposed convolution: the adjoint of [`conv2d`]'s input map plus bias.
/// `w` is `c_in x n x k x k`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    spec: &ConvSpec,
    output_padding: usize,
) -> Result<Tensor> {
    check_conv_inputs("conv_transpose2d", x, w, b, spec, true)?;
    let xs = x.shape();
    let low = transpose_lowering(xs, spec, output_padding)?;
    let mut out = Tensor::zeros([xs.n, spec.out_channels, low.big_h, low.big_w]);
    let mut cols = vec![0.0; low.rows() * low.cols()];
    for n in 0..xs.n {
        // cols (n*k*k x P_in) = w^T * x_n
        gemm(low.rows(), xs.c, low.cols(), w.data(), true, x.sample(n), false, &mut cols, 0.0);
        low.col2im(&cols, out.sample_mut(n));
    }
    add_bias(&mut out, b);
    Ok(out)
}

pub(crate) fn conv_transpose2d_backward_into(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    output_padding: usize,
    grad_out: &Tensor,
    param_acc: Option<(&mut [f32], &mut [f32])>,
) -> Result<Tensor> {
    let xs = x.shape();
    let low = transpose_lowering(xs, spec, output_padding)?;
    let expected = Shape::new(xs.n, spec.out_channels, low.big_h, low.big_w);
    if grad_out.shape() != expected {
        return Err(shape_err("conv_transpose2d backward", expected, grad_out.shape()));
    }
    let mut gx = Tensor::zeros(xs);
    let mut gcols = vec![0.0; low.rows() * low.cols()];
    let mut param_acc = param_acc;
    for n in 0..xs.n {
        low.im2col(grad_out.sample(n), &mut gcols);
        // gx_n (c_in x P_in) = w (c_in x rows) * gcols (rows x P_in)
        gemm(xs.c, low.rows(), low.cols(), w.data(), false, &gcols, false, gx.sample_mut(n), 0.0);
        if let Some((gw, _)) = param_acc.as_mut() {
            // gw (c_in x rows) += x_n (c_in x P_in) * gcols^T
            gemm(xs.c, low.cols(), low.rows(), x.sample(n), false, &gcols, true, gw, 1.0);
        }
    }
    if let Some((_, gb)) = param_acc {
        bias_grad(grad_out, gb);
    }
    Ok(gx)
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    output_padding: usize,
    grad_out: &Tensor,
    param_grads: bool,
) -> Result<ConvGrads> {
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros([1, spec.out_channels, 1, 1]);
    let acc = param_grads.then_some((gw.data_mut(), gb.data_mut()));
    let input = conv_transpose2d_backward_into(x, w, spec, output_padding, grad_out, acc)?;
    Ok(ConvGrads {
        input,
        weight: param_grads.then_some(gw),
        bias: param_grads.then_some(gb),
    })
}

/// A convolution layer owning its weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = in_channels * spec.kernel * spec.kernel;
        Self {
            weight: Parameter::kaiming(
                [spec.out_channels, in_channels, spec.kernel, spec.kernel],
                fan_in,
                rng,
            ),
            bias: Parameter::new(Tensor::zeros([1, spec.out_channels, 1, 1])),
            spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight.value, &self.bias.value, &self.spec)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, param_grads: bool) -> Result<Tensor> {
        let acc = param_grads.then_some((self.weight.grad.data_mut(), self.bias.grad.data_mut()));
        conv2d_backward_into(x, &self.weight.value, &self.spec, grad_out, acc)
    }
}

/// A transposed convolution layer (`c_in x n x k x k` weight).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub spec: ConvSpec,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        spec: ConvSpec,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        // Each output pixel sees roughly in_channels * (k/s)^2 inputs.
        let fan_in = (in_channels * spec.kernel * spec.kernel / (spec.stride * spec.stride)).max(1);
        Self {
            weight: Parameter::kaiming(
                [in_channels, spec.out_channels, spec.kernel, spec.kernel],
                fan_in,
                rng,
            ),
            bias: Parameter::new(Tensor::zeros([1, spec.out_channels, 1, 1])),
            spec,
            output_padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv_transpose2d(x, &self.weight.value, &self.bias.value, &self.spec, self.output_padding)
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, param_grads: bool) -> Result<Tensor> {
        let acc = param_grads.then_some((self.weight.grad.data_mut(), self.bias.grad.data_mut()));
        conv_transpose2d_backward_into(
            x,
            &self.weight.value,
            &self.spec,
            self.output_padding,
            grad_out,
            acc,
        )
    }
}

/// Materializes the linear map `x -> conv2d(x, w, 0)` as a dense matrix
/// (rows = outputs, columns = inputs). Test support for tiny instances.
pub fn conv2d_matrix(in_shape: Shape, w: &Tensor, spec: &ConvSpec) -> Result<Vec<Vec<f32>>> {
    let zero_b = Tensor::zeros([1, spec.out_channels, 1, 1]);
    let mut columns = Vec::with_capacity(in_shape.numel());
    for i in 0..in_shape.numel() {
        let mut e = Tensor::zeros(in_shape);
        e.data_mut()[i] = 1.0;
        columns.push(conv2d(&e, w, &zero_b, spec)?.into_data());
    }
    let rows = columns[0].len();
    Ok((0..rows)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_ones_3x3_with_padding() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &w, &b, &ConvSpec::new(3, 1, 1, 1)).unwrap();
        // Hand count of in-bounds taps per position.
        let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn output_extent_formulas() {
        let down = ConvSpec::new(3, 1, 2, 1);
        assert_eq!(down.conv_out(224).unwrap(), 112);
        assert_eq!(down.conv_transpose_out(112, 1).unwrap(), 224);
        assert!(ConvSpec::new(7, 1, 1, 0).conv_out(5).is_err());
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn([2, 3, 5, 5], 1.0, &mut rng);
        let w = Tensor::zeros([4, 3, 3, 3]);
        let b = Tensor::from_vec([1, 4, 1, 1], alloc::vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let y = conv2d(&x, &w, &b, &ConvSpec::new(3, 4, 1, 1)).unwrap();
        for n in 0..2 {
            for c in 0..4 {
                for h in 0..5 {
                    for ww in 0..5 {
                        assert_eq!(y.at(n, c, h, ww), b.data()[c]);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_kernel_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let mut w = Tensor::zeros([2, 2, 1, 1]);
        *w.at_mut(0, 0, 0, 0) = 1.0;
        *w.at_mut(1, 1, 0, 0) = 1.0;
        let b = Tensor::zeros([1, 2, 1, 1]);
        let y = conv_transpose2d(&x, &w, &b, &ConvSpec::new(1, 2, 1, 0), 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn weight_shape_mismatch_is_reported() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let err = conv2d(&x, &w, &b, &ConvSpec::new(3, 1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
