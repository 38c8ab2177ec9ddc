use image::Rgb32FImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Pooled, VerifierError, VerifierModel};
use crate::fingerprint::{augment_with, patchify, AugmentConfig, ConvEncoder, CorpusImage, SLOT_COUNT};

/// Area under the ROC curve via the rank-sum statistic; ties count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct EvalConfig {
    pub queries_per_image: usize,
    /// Negatives per query: the most fingerprint-similar patches of other images.
    pub hard_negatives: usize,
    pub augment: AugmentConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            queries_per_image: 2,
            hard_negatives: 20,
            augment: AugmentConfig::strong(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairScore {
    pub verifier: f64,
    /// Cosine between the two patch fingerprints.
    pub fingerprint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairEvaluation {
    pub positives: Vec<PairScore>,
    pub negatives: Vec<PairScore>,
    pub verifier_auc: f64,
    pub fingerprint_auc: f64,
    pub positive_median: f64,
    pub negative_median: f64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Scores augmented query patches against their clean source (positives) and
/// against the most fingerprint-similar patches of other images (hard negatives),
/// with both the verifier and plain fingerprint cosine.
pub fn evaluate_pairs(
    encoder: &ConvEncoder,
    model: &VerifierModel,
    images: &[&CorpusImage],
    cfg: &EvalConfig,
    rng: &mut impl Rng,
) -> Result<PairEvaluation, VerifierError> {
    let size = encoder.config.input_size;
    let mut bank_owner = Vec::new();
    let mut bank_pixels: Vec<Rgb32FImage> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for p in patchify(&img.image, size)? {
            bank_owner.push(i);
            bank_pixels.push(p.pixels);
        }
    }
    let refs: Vec<&Rgb32FImage> = bank_pixels.iter().collect();
    let (bank_emb, bank_maps) = encoder.encode(&refs)?;
    let bank_pooled: Vec<Pooled> = bank_maps.iter().map(|m| model.pool(m)).collect::<Result<_, _>>()?;

    let mut queries = Vec::new();
    let mut query_pixels = Vec::new();
    for i in 0..images.len() {
        for _ in 0..cfg.queries_per_image {
            let slot = rng.random_range(0..SLOT_COUNT);
            let bank_index = i * SLOT_COUNT + slot;
            query_pixels.push(augment_with(&bank_pixels[bank_index], &cfg.augment, rng));
            queries.push((i, bank_index));
        }
    }
    let refs: Vec<&Rgb32FImage> = query_pixels.iter().collect();
    let (query_emb, query_maps) = encoder.encode(&refs)?;

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (q, &(owner, source)) in queries.iter().enumerate() {
        let pooled = model.pool(&query_maps[q])?;
        let mut ranked: Vec<(f64, usize)> = bank_emb
            .iter()
            .enumerate()
            .filter(|&(b, _)| bank_owner[b] != owner)
            .map(|(b, e)| (dot(&query_emb[q], e), b))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(cfg.hard_negatives);
        let mut targets = vec![(dot(&query_emb[q], &bank_emb[source]), source)];
        targets.extend(ranked);
        let pairs: Vec<(&Pooled, &Pooled)> = targets.iter().map(|&(_, b)| (&pooled, &bank_pooled[b])).collect();
        let scores = model.score_pooled(&pairs)?;
        for (k, (&(fingerprint, _), verifier)) in targets.iter().zip(scores).enumerate() {
            let s = PairScore { verifier, fingerprint };
            if k == 0 {
                positives.push(s);
            } else {
                negatives.push(s);
            }
        }
    }
    let pick = |set: &[PairScore], f: fn(&PairScore) -> f64| -> Vec<f64> { set.iter().map(f).collect() };
    let (pv, nv) = (pick(&positives, |s| s.verifier), pick(&negatives, |s| s.verifier));
    let (pf, nf) = (pick(&positives, |s| s.fingerprint), pick(&negatives, |s| s.fingerprint));
    Ok(PairEvaluation {
        verifier_auc: auc(&pv, &nv),
        fingerprint_auc: auc(&pf, &nf),
        positive_median: median(&pv),
        negative_median: median(&nv),
        positives,
        negatives,
    })
}
