//! Thin safe wrapper over `matrixmultiply::sgemm` plus the im2col/col2im
//! lowering shared by both convolution directions.

/// `c = op(a) * op(b) + beta * c` on row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. With `trans_a` the buffer `a` holds the
/// `k x m` matrix; likewise for `trans_b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reached through the
    // given strides lies inside the three slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided kernel sweep: `big` is the dense image, `small`
/// the grid of kernel anchors. Anchor `(y, x)` touches big-image pixel
/// `(y*stride - pad + ky, x*stride - pad + kx)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lowering {
    pub channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Lowering {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Gathers `image` (`channels x big_h x big_w`) into `out` (`rows x cols`).
    pub fn im2col(&self, image: &[f32], out: &mut [f32]) {
        let k = self.kernel;
        let cols = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for y in 0..self.small_h {
                        let iy = (y * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[y * self.small_w..(y + 1) * self.small_w];
                        if iy < 0 || iy >= self.big_h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.big_w..(iy as usize + 1) * self.big_w];
                        for (x, v) in line.iter_mut().enumerate() {
                            let ix = (x * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.big_w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` (`rows x cols`) into `image`; adjoint of [`Self::im2col`].
    pub fn col2im(&self, cols_buf: &[f32], image: &mut [f32]) {
        let k = self.kernel;
        let cols = self.cols();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.big_h * self.big_w..(c + 1) * self.big_h * self.big_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols_buf[row * cols..(row + 1) * cols];
                    for y in 0..self.small_h {
                        let iy = (y * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.big_h as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.big_w..(iy as usize + 1) * self.big_w];
                        let line = &src[y * self.small_w..(y + 1) * self.small_w];
                        for (x, v) in line.iter().enumerate() {
                            let ix = (x * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.big_w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 1.0);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let l = Lowering {
            channels: 2,
            big_h: 5,
            big_w: 4,
            small_h: 3,
            small_w: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: alloc::vec::Vec<f32> = (0..40).map(|i| (i as f32 * 0.37).sin()).collect();
        let y: alloc::vec::Vec<f32> = (0..l.rows() * l.cols())
            .map(|i| (i as f32 * 0.11).cos())
            .collect();
        let mut ax = alloc::vec![0.0; l.rows() * l.cols()];
        l.im2col(&x, &mut ax);
        let mut aty = alloc::vec![0.0; 40];
        l.col2im(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
