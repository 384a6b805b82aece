//! Inference: a trained generator applied to one image.

use cartoon_core::checkpoint::Checkpoint;
use cartoon_core::imageops::{image_to_tensor, tensor_to_image, RasterImage};
use cartoon_core::models::{GeneratorConfig, GeneratorNet};
use cartoon_core::nn::Mode;
use cartoon_core::train::import_network;

use crate::error::{Error, Result};
use crate::trainer::META_GENERATOR;

/// Generator described by the checkpoint (default widths when the
/// checkpoint does not say), with its weights and running statistics.
pub fn generator_from_checkpoint(ck: &Checkpoint) -> Result<GeneratorNet> {
    let cfg: GeneratorConfig = match ck.meta(META_GENERATOR) {
        Some(raw) => serde_json::from_str(raw).map_err(|e| Error::Config(format!("{META_GENERATOR}: {e}")))?,
        None => GeneratorConfig::default(),
    };
    let mut g = GeneratorNet::new(cfg, 0);
    import_network(ck, "generator", &mut g.net)?;
    Ok(g)
}

/// Eval-mode forward. Sides that are not multiples of 4 are padded by
/// edge replication and the result cropped back.
pub fn stylize_with(g: &mut GeneratorNet, img: &RasterImage) -> Result<RasterImage> {
    let (w, h) = (img.width(), img.height());
    let up = |v: usize| v.div_ceil(4) * 4;
    let padded;
    let input = if w % 4 == 0 && h % 4 == 0 {
        img
    } else {
        padded = img.pad_replicate(up(w), up(h))?;
        &padded
    };
    let out = g.infer(&image_to_tensor(input), Mode::Eval)?;
    let out = tensor_to_image(&out)?;
    if (out.width(), out.height()) == (w, h) {
        Ok(out)
    } else {
        Ok(out.crop(w, h)?)
    }
}

pub fn stylize(ck: &Checkpoint, img: &RasterImage) -> Result<RasterImage> {
    stylize_with(&mut generator_from_checkpoint(ck)?, img)
}
