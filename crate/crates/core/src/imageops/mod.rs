//! 8-bit RGB rasters and the preprocessing pipeline: resizing, tensor
//! conversion, edge smoothing and difference hashing.
//!
//! Everything that produces pixels is integer or fixed-point arithmetic
//! with explicit rounding, so outputs are byte-identical across platforms.

mod edges;
mod hash;

pub use edges::{edge_mask, edge_smooth, gaussian_blur, gaussian_kernel, EdgeMask, EdgeSmoothParams};
pub use hash::{find_duplicates, hamming_distance, perceptual_hash, DuplicatePair, DEFAULT_DUP_THRESHOLD};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Row-major `height x width x 3` sRGB samples.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.put(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Grows the image to `width x height` by repeating the last column and
    /// row. Existing pixels keep their coordinates.
    pub fn pad_replicate(&self, width: usize, height: usize) -> Result<Self> {
        if width < self.width || height < self.height {
            return Err(Error::InvalidArgument(format!(
                "cannot pad {}x{} down to {width}x{height}",
                self.width, self.height
            )));
        }
        Self::from_fn(width, height, |x, y| {
            self.get(x.min(self.width - 1), y.min(self.height - 1))
        })
    }

    /// Top-left `width x height` region.
    pub fn crop(&self, width: usize, height: usize) -> Result<Self> {
        if width > self.width || height > self.height {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        Self::from_fn(width, height, |x, y| self.get(x, y))
    }
}

/// Luma `0.299 R + 0.587 G + 0.114 B`, scaled by 1000 and kept exact.
#[inline]
pub(crate) fn luma_milli(rgb: [u8; 3]) -> u32 {
    299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32
}

/// 8-bit luma, rounded half up.
#[inline]
pub(crate) fn luma8(rgb: [u8; 3]) -> u8 {
    ((luma_milli(rgb) + 500) / 1000) as u8
}

/// Round half away from zero and saturate to `0..=255`.
#[inline]
fn to_u8(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// Bilinear resampling with half-pixel-centred sample positions and
/// clamp-to-edge borders.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> Result<RasterImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("resize to {out_w}x{out_h}")));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    // (index, weight of index + 1) along one axis
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = (s as usize).min(n_in - 1);
                (i0, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(img.width, out_w);
    let ys = taps(img.height, out_h);
    let mut pixels = vec![0u8; out_w * out_h * 3];
    for (oy, &(y0, fy)) in ys.iter().enumerate() {
        let y1 = (y0 + 1).min(img.height - 1);
        for (ox, &(x0, fx)) in xs.iter().enumerate() {
            let x1 = (x0 + 1).min(img.width - 1);
            let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                pixels[(oy * out_w + ox) * 3 + ch] = to_u8(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    RasterImage::new(out_w, out_h, pixels)
}

/// `1 x 3 x H x W` tensor with samples mapped by `v / 127.5 - 1`.
pub fn image_to_tensor(img: &RasterImage) -> Tensor {
    let (w, h) = (img.width, img.height);
    let mut t = Tensor::zeros([1, 3, h, w]);
    let plane = w * h;
    let data = t.data_mut();
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    t
}

/// Inverse of [`image_to_tensor`]: clamp to `[-1, 1]`, then
/// `round((v + 1) * 127.5)` with halves rounded away from zero.
pub fn tensor_to_image(t: &Tensor) -> Result<RasterImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(shape_err("tensor_to_image", "1 x 3 x H x W", s));
    }
    sample_to_image(t, 0)
}

/// Converts sample `n` of an `N x 3 x H x W` batch.
pub fn sample_to_image(t: &Tensor, n: usize) -> Result<RasterImage> {
    let s = t.shape();
    if s.c != 3 || n >= s.n {
        return Err(shape_err("sample_to_image", Shape::new(n + 1, 3, s.h, s.w), s));
    }
    let plane = s.h * s.w;
    let src = t.sample(n);
    let mut pixels = vec![0u8; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            let v = src[c * plane + i];
            // NaN maps to the midpoint rather than poisoning the cast
            let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
            pixels[i * 3 + c] = libm::roundf((v + 1.0) * 127.5) as u8;
        }
    }
    RasterImage::new(s.w, s.h, pixels)
}

/// Stacks equally sized images into an `N x 3 x H x W` batch.
pub fn images_to_batch(images: &[RasterImage]) -> Result<Tensor> {
    let parts: Vec<Tensor> = images.iter().map(image_to_tensor).collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_batch(&refs)
}
