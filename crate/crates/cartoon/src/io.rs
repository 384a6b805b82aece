//! PNG/JPEG decoding and PNG encoding, plus directory listing.

use std::fs;
use std::path::{Path, PathBuf};

use cartoon_core::imageops::RasterImage;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{io_at, Error, Result};

/// Decodes a PNG or JPEG stream to 8-bit RGB; alpha is dropped, 16-bit
/// samples are scaled down.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Decode(format!("unsupported format {format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RasterImage::new(w as usize, h as usize, rgb.into_raw())?)
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.pixels(), img.width() as u32, img.height() as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_png(path: &Path, img: &RasterImage) -> Result<()> {
    fs::write(path, encode_png(img)?).map_err(io_at(path))
}

/// Regular, non-hidden files of `dir` in name order.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && entry.file_type().map_err(io_at(entry.path()))?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Files that failed to decode, with the reason.
pub type Skipped = Vec<(PathBuf, String)>;

/// Every decodable image of `dir`, with the files that failed and why.
pub fn read_dir_images(dir: &Path) -> Result<(Vec<(PathBuf, RasterImage)>, Skipped)> {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for path in list_files(dir)? {
        match read_image(&path) {
            Ok(img) => ok.push((path, img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((path, e.to_string()));
            }
        }
    }
    Ok((ok, skipped))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}
