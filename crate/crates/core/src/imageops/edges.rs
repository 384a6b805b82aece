//! Canny edge mask, dilation and edge-region Gaussian smoothing.
//!
//! Thresholds apply to the L1 Sobel magnitude `|gx| + |gy|` of the
//! pre-smoothed 8-bit luma, so the largest possible response is
//! `4 * 255 * 2 = 2040`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{luma8, RasterImage};
use crate::error::{Error, Result};

const ONE: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeSmoothParams {
    pub canny_low: f32,
    pub canny_high: f32,
    /// Structuring element is `(2r + 1)^2`.
    pub dilation_radius: usize,
    pub blur_kernel: usize,
    /// 0 derives sigma from the kernel size.
    pub blur_sigma: f64,
}

impl Default for EdgeSmoothParams {
    fn default() -> Self {
        Self {
            canny_low: 150.0,
            canny_high: 500.0,
            dilation_radius: 1,
            blur_kernel: 3,
            blur_sigma: 0.0,
        }
    }
}

impl EdgeSmoothParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.canny_low > 0.0 && self.canny_low <= self.canny_high) {
            return Err(Error::InvalidArgument(format!(
                "canny thresholds need 0 < low <= high, got {} / {}",
                self.canny_low, self.canny_high
            )));
        }
        if self.blur_kernel < 3 || self.blur_kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "blur kernel must be odd and >= 3, got {}",
                self.blur_kernel
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("blur sigma {}", self.blur_sigma)));
        }
        Ok(())
    }

    /// `blur_sigma`, or `(kernel - 1) / 4 + 0.3` when it is 0.
    pub fn sigma(&self) -> f64 {
        if self.blur_sigma > 0.0 {
            self.blur_sigma
        } else {
            (self.blur_kernel as f64 - 1.0) / 4.0 + 0.3
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl EdgeMask {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    /// Square dilation with a `(2r + 1)^2` structuring element, clipped at
    /// the borders.
    pub fn dilate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // separable: a square is a row max followed by a column max
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                rows[y * w + x] = self.bits[y * w + lo..=y * w + hi].contains(&true);
            }
        }
        let mut out = Self::empty(w, h);
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
            for x in 0..w {
                out.bits[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
            }
        }
        out
    }
}

/// Sampled Gaussian of odd length `k`, quantized to weights summing to
/// exactly `2^16`. The centre tap absorbs the quantization residue.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<u32> {
    let r = (k / 2) as f64;
    let g: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = g.iter().sum();
    let mut w: Vec<u32> = g.iter().map(|v| libm::round(v / total * ONE as f64) as u32).collect();
    let rest: u32 = w.iter().enumerate().filter(|&(i, _)| i != k / 2).map(|(_, &v)| v).sum();
    w[k / 2] = ONE - rest;
    w
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur of one 8-bit plane with replicated borders. The two
/// passes keep full precision and round once (half up).
fn blur_plane(src: &[u8], w: usize, h: usize, kernel: &[u32]) -> Vec<u8> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0u32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, &k)| k * row[clamp_index(x as isize + i as isize - r, w)] as u32)
                .sum();
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let acc: u64 = kernel
                .iter()
                .enumerate()
                .map(|(i, &k)| k as u64 * tmp[clamp_index(y as isize + i as isize - r, h) * w + x] as u64)
                .sum();
            out[y * w + x] = ((acc + (1 << 31)) >> 32) as u8;
        }
    }
    out
}

/// Whole-image Gaussian blur, each channel independently.
pub fn gaussian_blur(img: &RasterImage, kernel: usize, sigma: f64) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let taps = gaussian_kernel(kernel, sigma);
    let mut out = img.pixels().to_vec();
    for c in 0..3 {
        let plane: Vec<u8> = img.pixels().iter().skip(c).step_by(3).copied().collect();
        for (i, v) in blur_plane(&plane, w, h, &taps).into_iter().enumerate() {
            out[i * 3 + c] = v;
        }
    }
    RasterImage::new(w, h, out).expect("same dimensions")
}

/// tan(22.5 deg) in Q15.
const TG22: i64 = 13573;

/// Canny edges of the luma channel (before dilation).
fn canny(img: &RasterImage, p: &EdgeSmoothParams) -> EdgeMask {
    let (w, h) = (img.width(), img.height());
    let gray: Vec<u8> = img.pixels().chunks_exact(3).map(|c| luma8([c[0], c[1], c[2]])).collect();
    let g = blur_plane(&gray, w, h, &gaussian_kernel(p.blur_kernel, p.sigma()));
    let at = |x: isize, y: isize| g[clamp_index(y, h) * w + clamp_index(x, w)] as i64;

    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    let mut mag = vec![0i64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.abs() + dy.abs();
        }
    }
    // magnitudes outside the image count as zero
    let m_at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // 0 = suppressed, 1 = weak candidate, 2 = strong
    let mut class = vec![0u8; w * h];
    let mut stack = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if (m as f32) <= p.canny_low {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let tg22x = ax * TG22;
            let yq = ay << 15;
            // Ties along the gradient keep the first of two equal
            // neighbours, so a symmetric step yields a one-pixel line.
            let keep = if yq < tg22x {
                m > m_at(x - 1, y) && m >= m_at(x + 1, y)
            } else if yq > tg22x + (ax << 16) {
                m > m_at(x, y - 1) && m >= m_at(x, y + 1)
            } else {
                let s = if (gx[i] < 0) != (gy[i] < 0) { -1 } else { 1 };
                m > m_at(x - s, y - 1) && m > m_at(x + s, y + 1)
            };
            if !keep {
                continue;
            }
            if m as f32 > p.canny_high {
                class[i] = 2;
                stack.push(i);
            } else {
                class[i] = 1;
            }
        }
    }

    let mut out = EdgeMask::empty(w, h);
    for &i in &stack {
        out.bits[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !out.bits[j] {
                    out.bits[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// Luma conversion, Gaussian pre-smoothing with the blur kernel, Sobel
/// gradients, non-maximum suppression, hysteresis between
/// `canny_low`/`canny_high`, then dilation.
pub fn edge_mask(img: &RasterImage, p: &EdgeSmoothParams) -> Result<EdgeMask> {
    p.validate()?;
    Ok(canny(img, p).dilate(p.dilation_radius))
}

/// Blurred image inside the edge mask, the input everywhere else.
pub fn edge_smooth(img: &RasterImage, p: &EdgeSmoothParams) -> Result<RasterImage> {
    let mask = edge_mask(img, p)?;
    if mask.is_empty() {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, p.blur_kernel, p.sigma());
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.get(x, y) {
                out.put(x, y, blurred.get(x, y));
            }
        }
    }
    Ok(out)
}
