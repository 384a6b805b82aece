//! Difference hash for near-duplicate detection.
//!
//! The image is area-averaged onto a 9 x 8 luma grid and each row
//! contributes 8 bits, set where a cell is darker than its right
//! neighbour. Cell sums are exact integers (every cell covers the same
//! area), so the hash never depends on float rounding. Constant images of
//! any colour hash to 0.

use alloc::vec;
use alloc::vec::Vec;

use super::{luma_milli, RasterImage};

pub const DEFAULT_DUP_THRESHOLD: u32 = 8;

const GRID_W: usize = 9;
const GRID_H: usize = 8;

/// Overlap of source pixel `i` (spanning `[i*cells, (i+1)*cells)`) with
/// every cell (spanning `[c*n, (c+1)*n)`), in units of `1 / (n * cells)`.
fn overlaps(n: usize, cells: usize) -> Vec<Vec<(usize, u64)>> {
    (0..n)
        .map(|i| {
            let (a, b) = (i * cells, (i + 1) * cells);
            (a / n..=((b - 1) / n).min(cells - 1))
                .filter_map(|c| {
                    let lo = a.max(c * n);
                    let hi = b.min((c + 1) * n);
                    (hi > lo).then_some((c, (hi - lo) as u64))
                })
                .collect()
        })
        .collect()
}

pub fn perceptual_hash(img: &RasterImage) -> u64 {
    let xs = overlaps(img.width(), GRID_W);
    let ys = overlaps(img.height(), GRID_H);
    let mut cells = vec![0u128; GRID_W * GRID_H];
    for (y, yo) in ys.iter().enumerate() {
        for (x, xo) in xs.iter().enumerate() {
            let l = luma_milli(img.get(x, y)) as u128;
            for &(cy, wy) in yo {
                for &(cx, wx) in xo {
                    cells[cy * GRID_W + cx] += l * (wx * wy) as u128;
                }
            }
        }
    }
    let mut hash = 0u64;
    for row in 0..GRID_H {
        for col in 0..GRID_W - 1 {
            let i = row * GRID_W + col;
            hash = (hash << 1) | (cells[i] < cells[i + 1]) as u64;
        }
    }
    hash
}

#[inline]
pub fn hamming_distance(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DuplicatePair {
    pub first: usize,
    pub second: usize,
    pub distance: u32,
}

/// All index pairs `i < j` whose hashes differ in at most `threshold` bits,
/// in lexicographic order.
pub fn find_duplicates(hashes: &[u64], threshold: u32) -> Vec<DuplicatePair> {
    let mut out = Vec::new();
    for (i, &a) in hashes.iter().enumerate() {
        for (j, &b) in hashes.iter().enumerate().skip(i + 1) {
            let distance = hamming_distance(a, b);
            if distance <= threshold {
                out.push(DuplicatePair {
                    first: i,
                    second: j,
                    distance,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlaps_cover_each_pixel_once() {
        for n in [1, 5, 8, 9, 17, 224] {
            for cells in [8, 9] {
                let o = overlaps(n, cells);
                for row in &o {
                    assert_eq!(row.iter().map(|&(_, w)| w).sum::<u64>(), cells as u64);
                }
                let mut per_cell = vec![0u64; cells];
                for row in &o {
                    for &(c, w) in row {
                        per_cell[c] += w;
                    }
                }
                assert!(per_cell.iter().all(|&a| a == n as u64), "{n} {cells} {per_cell:?}");
            }
        }
    }

    #[test]
    fn constant_images_collide_at_zero() {
        let black = RasterImage::filled(20, 20, [0; 3]).unwrap();
        let white = RasterImage::filled(20, 20, [255; 3]).unwrap();
        assert_eq!(perceptual_hash(&black), 0);
        assert_eq!(perceptual_hash(&white), 0);
    }

    #[test]
    fn horizontal_ramp_sets_every_bit() {
        let ramp = RasterImage::from_fn(90, 16, |x, _| [x as u8 * 2; 3]).unwrap();
        assert_eq!(perceptual_hash(&ramp), u64::MAX);
        assert_eq!(perceptual_hash(&ramp.flip_horizontal()), 0);
    }

    #[test]
    fn pair_finder() {
        let pairs = find_duplicates(&[0, 0b111, u64::MAX, 0b1], 3);
        let ids: Vec<(usize, usize)> = pairs.iter().map(|p| (p.first, p.second)).collect();
        assert_eq!(ids, [(0, 1), (0, 3), (1, 3)]);
        assert_eq!(pairs[0].distance, 3);
    }
}
