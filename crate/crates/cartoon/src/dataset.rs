//! In-memory image sets with seeded per-epoch shuffles, drop-last
//! batching and horizontal-flip augmentation.

use std::path::{Path, PathBuf};

use cartoon_core::imageops::{images_to_batch, resize_bilinear, RasterImage};
use cartoon_core::train::derive_seed;
use cartoon_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::read_dir_images;

const FLIP_STREAM: u64 = 0xf11b;

#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<RasterImage>,
    names: Vec<String>,
    skipped: Vec<(PathBuf, String)>,
    flip: bool,
}

/// Decodes every image of `dir` and resizes it to `size x size`.
/// Undecodable files are logged and counted, not fatal.
pub fn load_dataset(dir: &Path, size: usize) -> Result<Dataset> {
    let (found, skipped) = read_dir_images(dir)?;
    if found.is_empty() {
        return Err(Error::Config(format!("{} holds no decodable images", dir.display())));
    }
    if !skipped.is_empty() {
        log::warn!("{}: skipped {} undecodable file(s)", dir.display(), skipped.len());
    }
    let mut images = Vec::with_capacity(found.len());
    let mut names = Vec::with_capacity(found.len());
    for (path, img) in found {
        images.push(fit(img, size)?);
        names.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok(Dataset {
        images,
        names,
        skipped,
        flip: true,
    })
}

fn fit(img: RasterImage, size: usize) -> Result<RasterImage> {
    if img.width() == size && img.height() == size {
        Ok(img)
    } else {
        Ok(resize_bilinear(&img, size, size)?)
    }
}

impl Dataset {
    /// Equally sized images, already at training resolution.
    pub fn from_images(images: Vec<RasterImage>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
        let dims = (first.width(), first.height());
        if images.iter().any(|i| (i.width(), i.height()) != dims) {
            return Err(Error::Config("dataset images differ in size".into()));
        }
        let names = (0..images.len()).map(|i| format!("#{i}")).collect();
        Ok(Self {
            images,
            names,
            skipped: Vec::new(),
            flip: true,
        })
    }

    /// Turns the random horizontal flip on or off (on by default).
    pub fn with_flip(mut self, flip: bool) -> Self {
        self.flip = flip;
        self
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[RasterImage] {
        &self.images
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }

    /// Full batches per epoch; the remainder is dropped.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.images.len() / batch_size.max(1)
    }

    /// Image order of `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
        order
    }

    fn flipped(&self, seed: u64, epoch: u64, position: usize) -> bool {
        self.flip && derive_seed(derive_seed(seed ^ FLIP_STREAM, epoch), position as u64) & 1 == 1
    }

    /// Batch `index` of `epoch` as an `N x 3 x S x S` tensor.
    pub fn batch(&self, seed: u64, epoch: u64, index: usize, batch_size: usize) -> Result<Tensor> {
        if batch_size == 0 || index >= self.batches_per_epoch(batch_size) {
            return Err(Error::Config(format!(
                "batch {index} of size {batch_size} is past the end of a {}-image set",
                self.len()
            )));
        }
        let order = self.epoch_order(seed, epoch);
        let picked: Vec<RasterImage> = (index * batch_size..(index + 1) * batch_size)
            .map(|pos| {
                let img = &self.images[order[pos]];
                if self.flipped(seed, epoch, pos) {
                    img.flip_horizontal()
                } else {
                    img.clone()
                }
            })
            .collect();
        Ok(images_to_batch(&picked)?)
    }

    /// All batches of `epoch` in order.
    pub fn epoch_batches(&self, seed: u64, epoch: u64, batch_size: usize) -> impl Iterator<Item = Result<Tensor>> + '_ {
        (0..self.batches_per_epoch(batch_size)).map(move |i| self.batch(seed, epoch, i, batch_size))
    }

    /// Batch number `k` of an endless stream that walks epoch after epoch,
    /// used to recycle a set alongside a longer one.
    pub fn cycled_batch(&self, seed: u64, k: u64, batch_size: usize) -> Result<Tensor> {
        let per = self.batches_per_epoch(batch_size) as u64;
        if per == 0 {
            return Err(Error::Config(format!(
                "{} images cannot fill one batch of {batch_size}",
                self.len()
            )));
        }
        self.batch(seed, k / per, (k % per) as usize, batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize) -> Dataset {
        Dataset::from_images((0..n).map(|i| RasterImage::filled(4, 4, [i as u8; 3]).unwrap()).collect()).unwrap()
    }

    #[test]
    fn drop_last_batching() {
        let d = set(3);
        let batches: Vec<Tensor> = d.epoch_batches(1, 0, 2).map(Result::unwrap).collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].shape().n, 2);
        assert!(d.batch(1, 0, 1, 2).is_err());
    }

    #[test]
    fn orders_are_seeded_per_epoch() {
        let d = set(12);
        assert_eq!(d.epoch_order(5, 0), d.epoch_order(5, 0));
        let (a, b) = (d.epoch_order(5, 0), d.epoch_order(5, 1));
        assert!(a.iter().zip(&b).filter(|(x, y)| x != y).count() >= 3);
    }

    #[test]
    fn flips_only_when_enabled() {
        let ramp = RasterImage::from_fn(4, 4, |x, _| [x as u8 * 50; 3]).unwrap();
        let d = Dataset::from_images(vec![ramp.clone(); 16]).unwrap();
        let plain = d.clone().with_flip(false);
        let flat = images_to_batch(&vec![ramp; 16]).unwrap();
        assert_eq!(plain.batch(3, 0, 0, 16).unwrap(), flat);
        assert_ne!(d.batch(3, 0, 0, 16).unwrap(), flat);
    }

    #[test]
    fn cycling_walks_epochs() {
        let d = set(5);
        assert_eq!(d.cycled_batch(2, 3, 2).unwrap(), d.batch(2, 1, 1, 2).unwrap());
        assert!(set(1).cycled_batch(0, 0, 2).is_err());
    }
}
