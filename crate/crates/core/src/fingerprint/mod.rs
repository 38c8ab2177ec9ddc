//! Patch decomposition, augmentation and contrastively trained patch embeddings.

mod augment;
mod encoder;
mod io;
mod loss;
mod patch;
mod train;

use std::fs;
use std::path::Path;

use image::Rgb32FImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, augment_with, AugmentConfig};
pub use encoder::{normalize, ConvEncoder, EncoderConfig, EncoderTrace};
pub use io::{load_encoder, read_embeddings, save_encoder, write_embeddings, EmbeddingRecord, PrecomputedEmbeddings};
#[allow(unused_imports)]
pub(crate) use io::{read_exact, read_f32s, read_u32, read_u64, write_f32s};
pub use loss::{contrastive_loss, ContrastiveOutput};
pub use patch::{
    crop, extract_patch, patchify, psnr, resample, slot_grid, slot_rect, to_bytes, to_float, Patch, TileRect,
    MIN_IMAGE_SIDE, SLOT_COUNT,
};
pub use train::{separation, train_encoder, EncoderTrainConfig, EncoderTrainReport, SeparationStats};

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("image {width}x{height} is smaller than {MIN_IMAGE_SIDE} px on a side")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("contrastive batch needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("corpus has {found} images, training needs at least {needed}")]
    CorpusTooSmall { found: usize, needed: usize },
    #[error("training diverged: {0}")]
    DivergedTraining(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error("no embedding for {}#{}", .0.image_id, .0.slot)]
    MissingEmbedding(PatchKey),
    #[error("image decode: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifies one patch of one corpus image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchKey {
    pub image_id: String,
    pub slot: u8,
}

impl PatchKey {
    pub fn new(image_id: &str, slot: u8) -> Self {
        PatchKey {
            image_id: image_id.to_string(),
            slot,
        }
    }
}

/// Encoder activations, stored position-major: `data[(y * width + x) * depth + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct CorpusImage {
    pub id: String,
    pub image: Rgb32FImage,
}

/// Anything that maps patches of a named image to unit-norm embeddings.
pub trait Fingerprinter {
    fn dim(&self) -> usize;
    fn embed_patches(&self, image_id: &str, patches: &[Patch]) -> Result<Vec<Vec<f32>>, FingerprintError>;
}

/// Produces the spatial feature maps the pairwise verifier pools over.
pub trait FeatureExtractor {
    fn feature_maps(&self, pixels: &[&Rgb32FImage]) -> Result<Vec<FeatureMap>, FingerprintError>;
}

const INFERENCE_BATCH: usize = 64;

impl ConvEncoder {
    /// Unit-norm embeddings and feature maps from one forward pass.
    pub fn encode(&self, pixels: &[&Rgb32FImage]) -> Result<(Vec<Vec<f32>>, Vec<FeatureMap>), FingerprintError> {
        let mut embeddings = Vec::with_capacity(pixels.len());
        let mut maps = Vec::with_capacity(pixels.len());
        for chunk in pixels.chunks(INFERENCE_BATCH) {
            let trace = self.forward(chunk)?;
            for row in trace.raw.chunks(self.config.embed_dim) {
                let mut v = row.to_vec();
                normalize(&mut v);
                embeddings.push(v);
            }
            maps.extend(self.maps_from_trace(&trace));
        }
        Ok((embeddings, maps))
    }

    pub fn embed(&self, pixels: &[&Rgb32FImage]) -> Result<Vec<Vec<f32>>, FingerprintError> {
        let mut embeddings = Vec::with_capacity(pixels.len());
        for chunk in pixels.chunks(INFERENCE_BATCH) {
            let trace = self.forward(chunk)?;
            for row in trace.raw.chunks(self.config.embed_dim) {
                let mut v = row.to_vec();
                normalize(&mut v);
                embeddings.push(v);
            }
        }
        Ok(embeddings)
    }
}

impl Fingerprinter for ConvEncoder {
    fn dim(&self) -> usize {
        self.config.embed_dim
    }

    fn embed_patches(&self, _image_id: &str, patches: &[Patch]) -> Result<Vec<Vec<f32>>, FingerprintError> {
        let refs: Vec<&Rgb32FImage> = patches.iter().map(|p| &p.pixels).collect();
        self.embed(&refs)
    }
}

impl FeatureExtractor for ConvEncoder {
    fn feature_maps(&self, pixels: &[&Rgb32FImage]) -> Result<Vec<FeatureMap>, FingerprintError> {
        Ok(self.encode(pixels)?.1)
    }
}

/// Embeds all 21 patches of every corpus image.
pub fn embed_corpus(
    encoder: &dyn Fingerprinter,
    corpus: &[CorpusImage],
    input_size: u32,
) -> Result<Vec<EmbeddingRecord>, FingerprintError> {
    let mut records = Vec::with_capacity(corpus.len() * SLOT_COUNT);
    for img in corpus {
        let patches = patchify(&img.image, input_size)?;
        let vectors = encoder.embed_patches(&img.id, &patches)?;
        for (p, vector) in patches.iter().zip(vectors) {
            records.push(EmbeddingRecord {
                key: PatchKey::new(&img.id, p.slot),
                vector,
            });
        }
    }
    Ok(records)
}

pub fn load_image(path: &Path) -> Result<Rgb32FImage, FingerprintError> {
    let img = image::open(path).map_err(|e| FingerprintError::Image(format!("{}: {e}", path.display())))?;
    Ok(to_float(&img.to_rgb8()))
}

pub fn save_image(path: &Path, img: &Rgb32FImage) -> Result<(), FingerprintError> {
    to_bytes(img)
        .save(path)
        .map_err(|e| FingerprintError::Image(format!("{}: {e}", path.display())))
}

/// Loads every PNG or JPEG in `dir`, sorted by file name; ids are file stems.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusImage>, FingerprintError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            Ok(CorpusImage {
                id: p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
                image: load_image(&p)?,
            })
        })
        .collect()
}
