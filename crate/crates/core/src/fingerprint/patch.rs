use image::imageops::{self, FilterType};
use image::{Rgb32FImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::FingerprintError;

pub const SLOT_COUNT: usize = 21;
pub const MIN_IMAGE_SIDE: u32 = 8;

/// Pixel rectangle of one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// One of the 21 tiles of an image, resampled to the encoder input size.
#[derive(Debug, Clone)]
pub struct Patch {
    pub slot: u8,
    pub rect: TileRect,
    pub pixels: Rgb32FImage,
}

/// Grid size (1, 2 or 4) and the row-major index within it for `slot`.
pub fn slot_grid(slot: u8) -> (u32, u32) {
    match slot {
        0 => (1, 0),
        1..=4 => (2, slot as u32 - 1),
        5..=20 => (4, slot as u32 - 5),
        _ => panic!("patch slot {slot} out of range 0..21"),
    }
}

fn span(len: u32, parts: u32, i: u32) -> (u32, u32) {
    let base = len / parts;
    let start = base * i;
    let size = if i + 1 == parts { len - start } else { base };
    (start, size)
}

/// Geometry of `slot` on a `width x height` image: slot 0 is the whole image,
/// 1..=4 the half-size tiles and 5..=20 the quarter-size tiles, both row-major.
/// Tiles in the last row and column absorb the division remainder.
pub fn slot_rect(width: u32, height: u32, slot: u8) -> TileRect {
    let (grid, index) = slot_grid(slot);
    let (x, w) = span(width, grid, index % grid);
    let (y, h) = span(height, grid, index / grid);
    TileRect {
        x,
        y,
        width: w,
        height: h,
    }
}

pub fn to_float(img: &RgbImage) -> Rgb32FImage {
    Rgb32FImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        image::Rgb([p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
    })
}

pub fn to_bytes(img: &Rgb32FImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y).0;
        image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

fn check_size(img: &Rgb32FImage) -> Result<(), FingerprintError> {
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Err(FingerprintError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

pub fn crop(img: &Rgb32FImage, rect: TileRect) -> Rgb32FImage {
    imageops::crop_imm(img, rect.x, rect.y, rect.width, rect.height).to_image()
}

/// Bilinear resampling to `size x size`.
pub fn resample(img: &Rgb32FImage, size: u32) -> Rgb32FImage {
    if img.width() == size && img.height() == size {
        return img.clone();
    }
    imageops::resize(img, size, size, FilterType::Triangle)
}

pub fn extract_patch(img: &Rgb32FImage, slot: u8, input_size: u32) -> Result<Patch, FingerprintError> {
    check_size(img)?;
    let rect = slot_rect(img.width(), img.height(), slot);
    Ok(Patch {
        slot,
        rect,
        pixels: resample(&crop(img, rect), input_size),
    })
}

pub fn patchify(img: &Rgb32FImage, input_size: u32) -> Result<Vec<Patch>, FingerprintError> {
    check_size(img)?;
    (0..SLOT_COUNT as u8)
        .map(|s| extract_patch(img, s, input_size))
        .collect()
}

/// Peak signal-to-noise ratio in dB for images with values in [0, 1].
pub fn psnr(a: &Rgb32FImage, b: &Rgb32FImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let n = a.as_raw().len() as f64;
    let mse: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(x, y)| (x.clamp(0.0, 1.0) as f64 - y.clamp(0.0, 1.0) as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
