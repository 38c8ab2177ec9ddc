use std::sync::Arc;

use image::Rgb32FImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_pairs, EvalConfig, PairEvaluation};
use super::pool::{correlate, pool_backward};
use super::queue::{NegativeQueue, QueueEntry};
use super::{sigmoid, MapShape, Pooled, VerifierConfig, VerifierError, VerifierModel};
use crate::fingerprint::{
    augment_with, extract_patch, AugmentConfig, ConvEncoder, CorpusImage, FeatureMap, PatchKey, SLOT_COUNT,
};
use crate::nn::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct VerifierTrainConfig {
    pub epochs: usize,
    /// Query patches per optimizer step.
    pub batch_size: usize,
    pub patches_per_image: usize,
    pub learning_rate: f64,
    pub queue_size: usize,
    pub hard_negatives: usize,
    /// Loss weight of each positive pair; `None` weighs it as much as all of
    /// its mined negatives together.
    pub positive_weight: Option<f64>,
    pub augment: AugmentConfig,
    pub validation_fraction: f64,
    pub min_corpus: usize,
    /// Training fails with `BelowAucFloor` if held-out AUC ends below this.
    pub auc_floor: f64,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for VerifierTrainConfig {
    fn default() -> Self {
        VerifierTrainConfig {
            epochs: 4,
            batch_size: 8,
            patches_per_image: 2,
            learning_rate: 1e-3,
            queue_size: 1 << 14,
            hard_negatives: 20,
            positive_weight: None,
            augment: AugmentConfig::strong(),
            validation_fraction: 0.1,
            min_corpus: 100,
            auc_floor: 0.5,
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifierTrainReport {
    pub step_losses: Vec<f64>,
    pub validation: PairEvaluation,
    pub validation_ids: Vec<String>,
}

/// One training pair: indices into a map list, a 0/1 label and a loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    pub label: f64,
    pub weight: f64,
}

impl VerifierModel {
    /// Weighted binary cross-entropy over `pairs`, normalized by total weight,
    /// with its gradient w.r.t. every parameter.
    pub fn bce_gradient(&self, maps: &[&FeatureMap], pairs: &[LabeledPair]) -> Result<(f64, Vec<f64>), VerifierError> {
        let mut grads = vec![0.0; self.params.len()];
        if pairs.is_empty() {
            return Ok((0.0, grads));
        }
        let pooled: Vec<Pooled> = maps.iter().map(|m| self.pool(m)).collect::<Result<_, _>>()?;
        let refs: Vec<(&Pooled, &Pooled)> = pairs.iter().map(|p| (&pooled[p.a], &pooled[p.b])).collect();
        let rows = self.pair_rows(&refs)?;
        let trace = self.mlp.forward(&self.params, self.mlp_input(&rows), pairs.len() * 2);
        let total_weight: f64 = pairs.iter().map(|p| p.weight).sum();
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(pairs.len() * 2);
        for (p, y) in pairs.iter().zip(trace.output().chunks(2)) {
            let z = y[0] + y[1];
            loss += p.weight * (z.max(0.0) - z * p.label + (-z.abs()).exp().ln_1p());
            let g = p.weight * (sigmoid(z) - p.label) / total_weight;
            d_out.push(g);
            d_out.push(g);
        }
        let mut d_rows = self.mlp.backward(&self.params, &trace, &d_out, &mut grads);
        let (shift, gain) = self.input_affine();
        let at = self.input_affine_at();
        for (d, c) in d_rows.iter_mut().zip(&rows) {
            grads[at] -= *d * gain;
            grads[at + 1] += *d * (c - shift);
            *d *= gain;
        }

        let n = self.windows.len();
        let d = self.reduction.output_depth;
        let mut d_pooled: Vec<Vec<f64>> = pooled.iter().map(|p| vec![0.0; p.rows.len()]).collect();
        for (k, p) in pairs.iter().enumerate() {
            let (x_ab, x_ba) = (
                &d_rows[2 * k * n * n..][..n * n],
                &d_rows[(2 * k + 1) * n * n..][..n * n],
            );
            let (fa, fb) = (&pooled[p.a], &pooled[p.b]);
            // C_ab[i][j] = <a_i, b_j>; the transposed row contributes at [j][i].
            let mut da = vec![0.0; n * d];
            let mut db = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..n {
                    let g = x_ab[i * n + j] + x_ba[j * n + i];
                    if g == 0.0 {
                        continue;
                    }
                    let (ra, rb) = (fa.row(i), fb.row(j));
                    for c in 0..d {
                        da[i * d + c] += g * rb[c];
                        db[j * d + c] += g * ra[c];
                    }
                }
            }
            d_pooled[p.a].iter_mut().zip(&da).for_each(|(x, y)| *x += y);
            d_pooled[p.b].iter_mut().zip(&db).for_each(|(x, y)| *x += y);
        }
        for ((map, pool), dp) in maps.iter().zip(&pooled).zip(&d_pooled) {
            if dp.iter().any(|&v| v != 0.0) {
                pool_backward(
                    map,
                    &self.windows,
                    pool,
                    &self.reduction,
                    self.config.gem_power,
                    dp,
                    &mut grads,
                );
            }
        }
        Ok((loss / total_weight, grads))
    }
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

/// Sets the correlation input affine so entries between random training patches
/// have zero mean and unit variance.
fn standardize_input(
    model: &mut VerifierModel,
    encoder: &ConvEncoder,
    corpus: &[CorpusImage],
    train: &[usize],
    rng: &mut impl Rng,
) -> Result<(), VerifierError> {
    let size = encoder.config.input_size;
    let mut pixels = Vec::new();
    for _ in 0..train.len().min(64) {
        let i = train[rng.random_range(0..train.len())];
        pixels.push(extract_patch(&corpus[i].image, rng.random_range(0..SLOT_COUNT as u8), size)?.pixels);
    }
    let refs: Vec<&Rgb32FImage> = pixels.iter().collect();
    let (_, maps) = encoder.encode(&refs)?;
    let pooled: Vec<Pooled> = maps.iter().map(|m| model.pool(m)).collect::<Result<_, _>>()?;
    let mut entries = Vec::new();
    for w in pooled.windows(2) {
        entries.extend(correlate(&w[0], &w[1])?);
    }
    if entries.is_empty() {
        return Ok(());
    }
    let mean = entries.iter().sum::<f64>() / entries.len() as f64;
    let var = entries.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / entries.len() as f64;
    model.set_input_affine(mean, 1.0 / var.sqrt().max(1e-3));
    Ok(())
}

/// Trains the verifier against a frozen encoder.
///
/// Each query is a strongly augmented patch. Its clean source is the positive;
/// the negatives are the queued patches of other images whose pooled summaries
/// are most cosine-similar to the query's. Positives carry weight equal to the
/// number of negatives so each query is balanced.
pub fn train_verifier(
    corpus: &[CorpusImage],
    encoder: &ConvEncoder,
    config: VerifierConfig,
    cfg: &VerifierTrainConfig,
) -> Result<(VerifierModel, VerifierTrainReport), VerifierError> {
    if corpus.len() < cfg.min_corpus {
        return Err(VerifierError::CorpusTooSmall {
            found: corpus.len(),
            needed: cfg.min_corpus,
        });
    }
    if cfg.batch_size == 0 {
        return Err(VerifierError::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = MapShape {
        side: encoder.config.feature_side(),
        depth: encoder.config.feature_depth(),
    };
    let mut model = VerifierModel::new(config, shape, rng.random())?;
    let size = encoder.config.input_size;
    let (train, validation) = split(corpus, cfg.validation_fraction, &mut rng);
    standardize_input(&mut model, encoder, corpus, &train, &mut rng)?;
    let mut opt = Adam::new(model.param_count(), cfg.learning_rate);
    let mut queue = NegativeQueue::new(cfg.queue_size);
    let mut step_losses = Vec::new();
    let steps_per_epoch = (train.len() * cfg.patches_per_image).div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);

    for _ in 0..cfg.epochs {
        let mut items: Vec<(usize, u8)> = train
            .iter()
            .flat_map(|&i| (0..cfg.patches_per_image).map(move |_| i))
            .map(|i| (i, rng.random_range(0..SLOT_COUNT as u8)))
            .collect();
        items.shuffle(&mut rng);
        for batch in items.chunks(cfg.batch_size) {
            let mut pixels: Vec<Rgb32FImage> = Vec::with_capacity(2 * batch.len());
            for &(i, slot) in batch {
                pixels.push(extract_patch(&corpus[i].image, slot, size)?.pixels);
            }
            for k in 0..batch.len() {
                let aug = augment_with(&pixels[k], &cfg.augment, &mut rng);
                pixels.push(aug);
            }
            let refs: Vec<&Rgb32FImage> = pixels.iter().collect();
            let (_, maps) = encoder.encode(&refs)?;
            let maps: Vec<Arc<FeatureMap>> = maps.into_iter().map(Arc::new).collect();
            let (clean, augmented) = maps.split_at(batch.len());

            let mut all: Vec<Arc<FeatureMap>> = maps.clone();
            let mut pairs = Vec::new();
            for (k, &(i, _)) in batch.iter().enumerate() {
                let q = batch.len() + k;
                let summary = model.pool(&augmented[k])?.row(0).to_vec();
                let negatives = queue.hardest(&summary, cfg.hard_negatives, &corpus[i].id);
                pairs.push(LabeledPair {
                    a: q,
                    b: k,
                    label: 1.0,
                    weight: cfg.positive_weight.unwrap_or(negatives.len().max(1) as f64),
                });
                for neg in negatives {
                    all.push(neg.map.clone());
                    pairs.push(LabeledPair {
                        a: q,
                        b: all.len() - 1,
                        label: 0.0,
                        weight: 1.0,
                    });
                }
            }
            let map_refs: Vec<&FeatureMap> = all.iter().map(|m| m.as_ref()).collect();
            let (loss, grads) = model.bce_gradient(&map_refs, &pairs)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(VerifierError::DivergedTraining(format!("loss {loss}")));
            }
            step_losses.push(loss);
            // Cosine decay to zero over the run.
            let progress = (step_losses.len() - 1) as f64 / total_steps as f64;
            opt.lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            opt.step_f64(&mut model.params, &grads);

            for (k, &(i, slot)) in batch.iter().enumerate() {
                let summary = model.pool(&clean[k])?.row(0).to_vec();
                queue.push(QueueEntry {
                    key: PatchKey::new(&corpus[i].id, slot),
                    summary,
                    map: clean[k].clone(),
                });
            }
        }
    }

    let held: Vec<&CorpusImage> = validation.iter().map(|&i| &corpus[i]).collect();
    let report = evaluate_pairs(encoder, &model, &held, &cfg.eval, &mut rng)?;
    if report.verifier_auc.is_nan() || report.verifier_auc < cfg.auc_floor {
        return Err(VerifierError::BelowAucFloor {
            auc: report.verifier_auc,
            floor: cfg.auc_floor,
        });
    }
    Ok((
        model,
        VerifierTrainReport {
            step_losses,
            validation: report,
            validation_ids: held.iter().map(|c| c.id.clone()).collect(),
        },
    ))
}
