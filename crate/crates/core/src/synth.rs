//! Procedural toy corpus and composite queries with exact ground truth.
//!
//! A composite query is assembled from tiles of corpus images placed on the
//! query's own tile grid, so each region's source patch is known exactly.

use std::collections::BTreeSet;

use image::{imageops, Rgb, Rgb32FImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint::{augment_with, crop, slot_rect, AugmentConfig, CorpusImage, TileRect};

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// One textured image: a colour gradient, overlaid gratings, and scattered shapes.
pub fn texture_image(size: u32, rng: &mut impl Rng) -> Rgb32FImage {
    let (c0, c1) = (random_color(rng), random_color(rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let mut img = Rgb32FImage::from_fn(size, size, |x, y| {
        let t = ((x as f32 * angle.cos() + y as f32 * angle.sin()) / size as f32 * 0.7 + 0.5).clamp(0.0, 1.0);
        Rgb(mix(c0, c1, t))
    });
    for _ in 0..rng.random_range(2..5) {
        let color = random_color(rng);
        let freq = rng.random_range(2.0..14.0f32) * std::f32::consts::TAU / size as f32;
        let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let strength = rng.random_range(0.2..0.6f32);
        let (dx, dy) = (theta.cos() * freq, theta.sin() * freq);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let wave = 0.5 + 0.5 * (x as f32 * dx + y as f32 * dy + phase).sin();
            p.0 = mix(p.0, color, strength * wave);
        }
    }
    for _ in 0..rng.random_range(8..16) {
        let color = random_color(rng);
        let cx = rng.random_range(0.0..size as f32);
        let cy = rng.random_range(0.0..size as f32);
        let r = rng.random_range(size as f32 * 0.04..size as f32 * 0.18);
        let kind = rng.random_range(0..3);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let (fx, fy) = (x as f32 - cx, y as f32 - cy);
            let inside = match kind {
                0 => fx * fx + fy * fy <= r * r,
                1 => fx.abs() <= r && fy.abs() <= r * 0.6,
                _ => {
                    let d = (fx * fx + fy * fy).sqrt();
                    d <= r && d >= r * 0.6
                }
            };
            if inside {
                p.0 = mix(p.0, color, 0.85);
            }
        }
    }
    img
}

/// Deterministic corpus of `count` images with ids `img-00000`, `img-00001`, ...
pub fn generate_corpus(count: usize, size: u32, seed: u64) -> Vec<CorpusImage> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            CorpusImage {
                id: format!("img-{i:05}"),
                image: texture_image(size, &mut rng),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompositeRegion {
    pub source_id: String,
    pub source_slot: u8,
    pub query_slot: u8,
    pub target: TileRect,
}

/// Ground truth recorded next to a composite query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompositeTruth {
    pub query_id: String,
    pub sources: Vec<String>,
    pub regions: Vec<CompositeRegion>,
    pub augmented: bool,
}

#[derive(Debug, Clone)]
pub struct CompositeQuery {
    pub image: Rgb32FImage,
    pub truth: CompositeTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct ComposeConfig {
    pub min_sources: usize,
    pub max_sources: usize,
    /// Applied to each tile before placement; `None` leaves the composite pixel-exact.
    pub augment: Option<AugmentConfig>,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            min_sources: 2,
            max_sources: 6,
            augment: None,
        }
    }
}

/// Builds one composite from `2..=6` corpus images (bounded by the config).
///
/// Each quadrant receives a half-size tile of some source. With more than four
/// sources one quadrant is instead filled with four quarter-size tiles. Every
/// chosen source fills at least one region. With an augmentation configured,
/// each tile is augmented on its own before it is placed, so regions stay
/// aligned with the query's tile grid.
pub fn compose_query(
    corpus: &[CorpusImage],
    query_id: &str,
    cfg: &ComposeConfig,
    rng: &mut impl Rng,
) -> CompositeQuery {
    assert!(cfg.min_sources >= 1 && cfg.min_sources <= cfg.max_sources);
    let count = rng.random_range(cfg.min_sources..=cfg.max_sources.min(corpus.len()).max(cfg.min_sources));
    let chosen: Vec<&CorpusImage> = corpus.choose_multiple(rng, count).collect();
    let (w, h) = chosen[0].image.dimensions();
    let mut canvas = Rgb32FImage::new(w, h);
    let mut regions = Vec::new();

    // With more than four sources one quadrant becomes a mosaic of quarter tiles.
    let split = if count > 4 {
        Some(rng.random_range(0..4u8))
    } else {
        None
    };
    let mut query_slots: Vec<u8> = Vec::new();
    for q in 0..4u8 {
        if split == Some(q) {
            let (qx, qy) = (q % 2, q / 2);
            query_slots.extend((0..4u8).map(|k| 5 + (qy * 2 + k / 2) * 4 + qx * 2 + k % 2));
        } else {
            query_slots.push(1 + q);
        }
    }
    let mut order: Vec<usize> = (0..query_slots.len()).collect();
    order.shuffle(rng);
    let mut owner = vec![0usize; query_slots.len()];
    for (rank, &region) in order.iter().enumerate() {
        owner[region] = if rank < count { rank } else { rng.random_range(0..count) };
    }
    for (region, &query_slot) in query_slots.iter().enumerate() {
        let source_slot = if query_slot < 5 {
            rng.random_range(1..5u8)
        } else {
            rng.random_range(5..21u8)
        };
        place(
            &mut canvas,
            chosen[owner[region]],
            source_slot,
            query_slot,
            cfg.augment.as_ref(),
            rng,
            &mut regions,
        );
    }
    let sources: BTreeSet<String> = regions.iter().map(|r| r.source_id.clone()).collect();
    CompositeQuery {
        image: canvas,
        truth: CompositeTruth {
            query_id: query_id.to_string(),
            sources: sources.into_iter().collect(),
            regions,
            augmented: cfg.augment.is_some_and(|a| a.severity > 0.0),
        },
    }
}

fn place(
    canvas: &mut Rgb32FImage,
    src: &CorpusImage,
    source_slot: u8,
    query_slot: u8,
    augment: Option<&AugmentConfig>,
    rng: &mut impl Rng,
    regions: &mut Vec<CompositeRegion>,
) {
    let (w, h) = canvas.dimensions();
    let target = slot_rect(w, h, query_slot);
    let (sw, sh) = src.image.dimensions();
    let mut tile = crop(&src.image, slot_rect(sw, sh, source_slot));
    if let Some(aug) = augment {
        tile = augment_with(&tile, aug, rng);
    }
    if tile.dimensions() != (target.width, target.height) {
        tile = imageops::resize(&tile, target.width, target.height, imageops::FilterType::Triangle);
    }
    imageops::replace(canvas, &tile, target.x as i64, target.y as i64);
    regions.push(CompositeRegion {
        source_id: src.id.clone(),
        source_slot,
        query_slot,
        target,
    });
}
