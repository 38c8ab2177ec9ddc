use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{imageops, ImageFormat, Rgb, Rgb32FImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::patch::{resample, to_bytes, to_float};

/// Augmentation strengths at severity 1. Every strength scales linearly with
/// `severity`; severity 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub severity: f32,
    /// Maximum relative change of brightness, contrast and saturation.
    pub color_jitter: f32,
    pub blur_sigma: f32,
    /// Smallest fraction of the area kept by the random resized crop.
    pub min_crop_area: f32,
    pub max_rotation_deg: f32,
    pub min_jpeg_quality: u8,
    pub noise_std: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            severity: 1.0,
            color_jitter: 0.5,
            blur_sigma: 1.5,
            min_crop_area: 0.45,
            max_rotation_deg: 30.0,
            min_jpeg_quality: 15,
            noise_std: 0.08,
        }
    }
}

impl AugmentConfig {
    pub fn with_severity(severity: f32) -> Self {
        AugmentConfig {
            severity,
            ..Default::default()
        }
    }

    pub fn identity() -> Self {
        Self::with_severity(0.0)
    }

    pub fn mild() -> Self {
        Self::with_severity(0.2)
    }

    pub fn strong() -> Self {
        Self::with_severity(1.0)
    }
}

pub fn augment(img: &Rgb32FImage, cfg: &AugmentConfig, seed: u64) -> Rgb32FImage {
    augment_with(img, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Applies resized crop, rotation, colour jitter, blur, JPEG re-encoding and
/// noise, in that order, each with a strength drawn up to the configured maximum.
pub fn augment_with(img: &Rgb32FImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> Rgb32FImage {
    let s = cfg.severity.clamp(0.0, 1.0);
    if s == 0.0 {
        return img.clone();
    }
    let mut out = resized_crop(img, 1.0 - s * (1.0 - cfg.min_crop_area), rng);
    out = rotate(&out, rng.random_range(-1.0..=1.0f32) * s * cfg.max_rotation_deg);
    color_jitter(&mut out, s * cfg.color_jitter, rng);
    let sigma = rng.random_range(0.0..=1.0f32) * s * cfg.blur_sigma;
    if sigma > 0.05 {
        out = imageops::blur(&out, sigma);
    }
    let quality = 100.0 - rng.random_range(0.0..=1.0f32) * s * (100.0 - cfg.min_jpeg_quality as f32);
    out = jpeg_round_trip(&out, quality.round().clamp(1.0, 100.0) as u8);
    add_noise(&mut out, rng.random_range(0.0..=1.0f32) * s * cfg.noise_std, rng);
    out
}

fn resized_crop(img: &Rgb32FImage, min_area: f32, rng: &mut impl Rng) -> Rgb32FImage {
    let (w, h) = img.dimensions();
    let area = rng.random_range(min_area.min(1.0)..=1.0f32);
    let log_ratio = rng.random_range(-0.2f32..=0.2);
    let ratio = log_ratio.exp();
    let cw = ((w as f32 * (area * ratio).sqrt()).round() as u32).clamp(1, w);
    let ch = ((h as f32 * (area / ratio).sqrt()).round() as u32).clamp(1, h);
    let x = rng.random_range(0..=w - cw);
    let y = rng.random_range(0..=h - ch);
    let cropped = imageops::crop_imm(img, x, y, cw, ch).to_image();
    if (cw, ch) == (w, h) {
        return cropped;
    }
    if w == h {
        resample(&cropped, w)
    } else {
        imageops::resize(&cropped, w, h, imageops::FilterType::Triangle)
    }
}

fn sample_bilinear(img: &Rgb32FImage, x: f32, y: f32) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let p = |xx, yy| img.get_pixel(xx, yy).0;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = p(x0, y0)[c] * (1.0 - fx) + p(x1, y0)[c] * fx;
        let bottom = p(x0, y1)[c] * (1.0 - fx) + p(x1, y1)[c] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Rotation about the centre; samples outside the image clamp to the border.
fn rotate(img: &Rgb32FImage, degrees: f32) -> Rgb32FImage {
    if degrees.abs() < 1e-3 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    Rgb32FImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f32 - cx, y as f32 - cy);
        Rgb(sample_bilinear(
            img,
            cos * dx + sin * dy + cx,
            -sin * dx + cos * dy + cy,
        ))
    })
}

fn color_jitter(img: &mut Rgb32FImage, strength: f32, rng: &mut impl Rng) {
    if strength <= 0.0 {
        return;
    }
    let brightness = 1.0 + rng.random_range(-strength..=strength);
    let contrast = 1.0 + rng.random_range(-strength..=strength);
    let saturation = 1.0 + rng.random_range(-strength..=strength);
    let n = (img.width() * img.height()) as f32;
    let mean_luma = img.pixels().map(|p| luma(p.0)).sum::<f32>() / n;
    for p in img.pixels_mut() {
        let gray = luma(p.0);
        for v in p.0.iter_mut() {
            let mut x = gray + (*v - gray) * saturation;
            x = (x - mean_luma) * contrast + mean_luma;
            *v = (x * brightness).clamp(0.0, 1.0);
        }
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn jpeg_round_trip(img: &Rgb32FImage, quality: u8) -> Rgb32FImage {
    if quality >= 100 {
        return img.clone();
    }
    let bytes = to_bytes(img);
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&bytes)
        .expect("encoding an in-memory RGB image cannot fail");
    let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg).expect("decoding our own JPEG");
    to_float(&decoded.to_rgb8())
}

fn add_noise(img: &mut Rgb32FImage, std: f32, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, std).expect("positive std");
    for v in img.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
}
