use image::Rgb32FImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_with, AugmentConfig};
use super::encoder::{normalize, ConvEncoder, EncoderConfig};
use super::loss::contrastive_loss;
use super::patch::{extract_patch, SLOT_COUNT};
use super::{CorpusImage, FingerprintError};
use crate::nn::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Random patches drawn from every training image per epoch.
    pub patches_per_image: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub augment: AugmentConfig,
    pub validation_fraction: f64,
    pub min_corpus: usize,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            epochs: 20,
            batch_size: 32,
            patches_per_image: 1,
            learning_rate: 1e-3,
            temperature: 0.1,
            augment: AugmentConfig::strong(),
            validation_fraction: 0.1,
            min_corpus: 100,
            seed: 0,
        }
    }
}

/// Mean cosine of positive pairs versus distinct-patch pairs on held-out images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeparationStats {
    pub positive_mean: f64,
    pub negative_mean: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EncoderTrainReport {
    pub step_losses: Vec<f64>,
    pub validation: SeparationStats,
    pub validation_ids: Vec<String>,
}

fn split(corpus: &[CorpusImage], fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let held = ((corpus.len() as f64 * fraction).round() as usize).clamp(2.min(corpus.len()), corpus.len() / 2);
    let validation = order[..held].to_vec();
    let mut train = order[held..].to_vec();
    train.sort_unstable();
    (train, validation)
}

/// Trains the encoder with the contrastive objective, anchors being clean
/// patches and positives their augmented copies.
pub fn train_encoder(
    corpus: &[CorpusImage],
    encoder_config: EncoderConfig,
    cfg: &EncoderTrainConfig,
) -> Result<(ConvEncoder, EncoderTrainReport), FingerprintError> {
    if corpus.len() < cfg.min_corpus {
        return Err(FingerprintError::CorpusTooSmall {
            found: corpus.len(),
            needed: cfg.min_corpus,
        });
    }
    if cfg.batch_size < 2 {
        return Err(FingerprintError::DegenerateBatch(cfg.batch_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = ConvEncoder::new(encoder_config, rng.random())?;
    let size = encoder.config.input_size;
    let (train, validation) = split(corpus, cfg.validation_fraction, &mut rng);
    let mut opt = Adam::new(encoder.param_count(), cfg.learning_rate);
    let mut step_losses = Vec::new();
    let dim = encoder.config.embed_dim;

    for _ in 0..cfg.epochs {
        let mut items: Vec<(usize, u8)> = train
            .iter()
            .flat_map(|&i| (0..cfg.patches_per_image).map(move |_| i))
            .map(|i| (i, rng.random_range(0..SLOT_COUNT as u8)))
            .collect();
        items.shuffle(&mut rng);
        for batch in items.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let b = batch.len();
            let mut pixels: Vec<Rgb32FImage> = Vec::with_capacity(2 * b);
            for &(i, slot) in batch {
                pixels.push(extract_patch(&corpus[i].image, slot, size)?.pixels);
            }
            for k in 0..b {
                let aug = augment_with(&pixels[k], &cfg.augment, &mut rng);
                pixels.push(aug);
            }
            let refs: Vec<&Rgb32FImage> = pixels.iter().collect();
            let trace = encoder.forward(&refs)?;
            let raw: Vec<f64> = trace.raw.iter().map(|&v| v as f64).collect();
            let out = contrastive_loss(&raw[..b * dim], &raw[b * dim..], dim, cfg.temperature)?;
            let scale = 1.0 / b as f64;
            step_losses.push(out.loss * scale);
            let d_raw: Vec<f32> = out
                .grad_phi
                .iter()
                .chain(&out.grad_phi_hat)
                .map(|g| (g * scale) as f32)
                .collect();
            let grads = encoder.backward(&trace, &d_raw);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(FingerprintError::DivergedTraining("non-finite encoder gradient".into()));
            }
            opt.step_f32(&mut encoder.params, &grads);
        }
    }

    let held: Vec<&CorpusImage> = validation.iter().map(|&i| &corpus[i]).collect();
    let stats = separation(&encoder, &held, &cfg.augment, &mut rng)?;
    Ok((
        encoder,
        EncoderTrainReport {
            step_losses,
            validation: stats,
            validation_ids: held.iter().map(|c| c.id.clone()).collect(),
        },
    ))
}

/// One random patch per image, paired with an augmented copy.
pub fn separation(
    encoder: &ConvEncoder,
    images: &[&CorpusImage],
    augment: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<SeparationStats, FingerprintError> {
    let size = encoder.config.input_size;
    let mut clean = Vec::new();
    let mut augmented = Vec::new();
    for img in images {
        let patch = extract_patch(&img.image, rng.random_range(0..SLOT_COUNT as u8), size)?.pixels;
        augmented.push(augment_with(&patch, augment, rng));
        clean.push(patch);
    }
    let embed = |set: &[Rgb32FImage]| -> Result<Vec<Vec<f32>>, FingerprintError> {
        let mut out = Vec::new();
        for chunk in set.chunks(64) {
            let refs: Vec<&Rgb32FImage> = chunk.iter().collect();
            let trace = encoder.forward(&refs)?;
            for row in trace.raw.chunks(encoder.config.embed_dim) {
                let mut v = row.to_vec();
                normalize(&mut v);
                out.push(v);
            }
        }
        Ok(out)
    };
    let a = embed(&clean)?;
    let b = embed(&augmented)?;
    let cos = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| *p as f64 * *q as f64).sum::<f64>();
    let n = a.len();
    let positive_mean = (0..n).map(|i| cos(&a[i], &b[i])).sum::<f64>() / n as f64;
    let mut negative_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                negative_sum += cos(&a[i], &a[j]);
                pairs += 1;
            }
        }
    }
    let negative_mean = if pairs == 0 { 0.0 } else { negative_sum / pairs as f64 };
    Ok(SeparationStats {
        positive_mean,
        negative_mean,
        gap: positive_mean - negative_mean,
    })
}
