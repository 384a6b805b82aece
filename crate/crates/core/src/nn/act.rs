use crate::error::Result;
use crate::tensor::Tensor;

/// Negative slope used by every leaky ReLU in the discriminator and the
/// feature extractor.
pub const LRELU_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActKind {
    Relu,
    LeakyRelu(f32),
}

impl ActKind {
    pub const fn lrelu() -> Self {
        ActKind::LeakyRelu(LRELU_SLOPE)
    }

    #[inline]
    fn negative_slope(self) -> f32 {
        match self {
            ActKind::Relu => 0.0,
            ActKind::LeakyRelu(a) => a,
        }
    }
}

pub fn activation(x: &Tensor, kind: ActKind) -> Tensor {
    let a = kind.negative_slope();
    x.map(|v| if v >= 0.0 { v } else { a * v })
}

/// Gradient of [`activation`] given its input. The derivative at exactly
/// zero is taken as 1 for both kinds.
pub fn activation_backward(x: &Tensor, grad_out: &Tensor, kind: ActKind) -> Result<Tensor> {
    x.ensure_same_shape(grad_out, "activation backward")?;
    let a = kind.negative_slope();
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv < 0.0 {
            *gv *= a;
        }
    }
    Ok(g)
}
