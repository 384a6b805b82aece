use rand::Rng;

use crate::tensor::{Shape, Tensor};

/// A trainable tensor with its gradient accumulator and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    /// Fan-in scaled normal init, `std = sqrt(2 / fan_in)`.
    pub fn kaiming<R: Rng + ?Sized>(shape: impl Into<Shape>, fan_in: usize, rng: &mut R) -> Self {
        let std = libm::sqrtf(2.0 / fan_in as f32);
        Self::new(Tensor::randn(shape, std, rng))
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
