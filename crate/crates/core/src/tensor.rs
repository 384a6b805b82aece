//! Dense `N x C x H x W` tensors of `f32`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};

/// Extents of a 4-D tensor in `(N, C, H, W)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one sample (`C * H * W`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn is_valid(&self) -> bool {
        self.n >= 1 && self.c >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(a: [usize; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    /// # Panics
    /// Panics if any extent is zero.
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Shape>, value: f32) -> Self {
        let shape = shape.into();
        assert!(shape.is_valid(), "tensor extents must be >= 1, got {shape}");
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if !shape.is_valid() {
            return Err(Error::InvalidArgument(alloc::format!(
                "tensor extents must be >= 1, got {shape}"
            )));
        }
        if data.len() != shape.numel() {
            return Err(shape_err(
                "Tensor::from_vec",
                alloc::format!("{} elements for {shape}", shape.numel()),
                alloc::format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Samples i.i.d. `N(0, std^2)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, std: f32, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            let z: f32 = StandardNormal.sample(rng);
            *v = z * std;
        }
        t
    }

    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Shape>, lo: f32, hi: f32, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.random_range(lo..hi);
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Sample `i` along the batch axis.
    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.shape.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.shape.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f32 {
        let s = self.shape;
        &mut self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() || !shape.is_valid() {
            return Err(shape_err("Tensor::reshape", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(op, self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.ensure_same_shape(other, "Tensor::add")?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.ensure_same_shape(other, "Tensor::sub")?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f32, other: &Tensor) -> Result<()> {
        self.ensure_same_shape(other, "Tensor::axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f32) -> Self {
        self.map(|v| v * alpha)
    }

    /// Sum accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// `sum(self * other)` in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.ensure_same_shape(other, "Tensor::dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.ensure_same_shape(other, "Tensor::max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabsf(a - b))
            .fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks tensors along the batch axis. All inputs must share `C, H, W`.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_batch of zero tensors".into()))?;
        let s = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            let ps = p.shape;
            if (ps.c, ps.h, ps.w) != (s.c, s.h, s.w) {
                return Err(shape_err("Tensor::concat_batch", s, ps));
            }
            n += ps.n;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }

    /// Copies samples `start..end` along the batch axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.n {
            return Err(Error::InvalidArgument(alloc::format!(
                "batch slice {start}..{end} out of range for {}",
                self.shape
            )));
        }
        let l = self.shape.sample_len();
        Self::from_vec(
            Shape::new(end - start, self.shape.c, self.shape.h, self.shape.w),
            self.data[start * l..end * l].to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 4]).is_ok());
        assert!(Tensor::from_vec([0, 1, 2, 2], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.at(0, 1, 0, 2), 8.0);
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
    }

    #[test]
    fn concat_then_slice() {
        let a = Tensor::full([1, 2, 2, 2], 1.0);
        let b = Tensor::full([2, 2, 2, 2], 2.0);
        let c = Tensor::concat_batch(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(3, 2, 2, 2));
        assert_eq!(c.slice_batch(1, 3).unwrap(), b);
        assert!(Tensor::concat_batch(&[&a, &Tensor::zeros([1, 3, 2, 2])]).is_err());
    }
}
