use std::collections::{BTreeMap, HashMap};

use image::Rgb32FImage;

use super::{apportion, ApportionError, AttributionConfig, CreditReport, ScoredMatch};
use crate::fingerprint::{extract_patch, patchify, ConvEncoder, CorpusImage, FeatureExtractor, PatchKey};
use crate::index::{IvfPqIndex, SearchOptions};
use crate::verifier::{Pooled, VerifierModel};

/// Supplies pixels of indexed patches, resampled to the encoder input size.
pub trait PatchSource {
    fn patch(&self, key: &PatchKey, input_size: u32) -> Result<Rgb32FImage, ApportionError>;
}

/// Patch source backed by in-memory corpus images.
pub struct CorpusPatches<'a> {
    by_id: HashMap<&'a str, &'a Rgb32FImage>,
}

impl<'a> CorpusPatches<'a> {
    pub fn new(corpus: &'a [CorpusImage]) -> Self {
        CorpusPatches {
            by_id: corpus.iter().map(|c| (c.id.as_str(), &c.image)).collect(),
        }
    }
}

impl PatchSource for CorpusPatches<'_> {
    fn patch(&self, key: &PatchKey, input_size: u32) -> Result<Rgb32FImage, ApportionError> {
        let img = self
            .by_id
            .get(key.image_id.as_str())
            .ok_or_else(|| ApportionError::MissingPatch {
                image_id: key.image_id.clone(),
                slot: key.slot,
            })?;
        Ok(extract_patch(img, key.slot, input_size)?.pixels)
    }
}

/// Retrieves the top-K fingerprint hits for every patch of `query` and scores
/// each with the verifier.
pub fn verify_matches(
    query: &Rgb32FImage,
    index: &IvfPqIndex,
    encoder: &ConvEncoder,
    verifier: &VerifierModel,
    source: &dyn PatchSource,
    config: &AttributionConfig,
) -> Result<Vec<ScoredMatch>, ApportionError> {
    config.validate()?;
    let input_size = encoder.config.input_size;
    let patches = patchify(query, input_size)?;
    let pixels: Vec<&Rgb32FImage> = patches.iter().map(|p| &p.pixels).collect();
    let (embeddings, maps) = encoder.encode(&pixels)?;
    let query_pooled = maps.iter().map(|m| verifier.pool(m)).collect::<Result<Vec<_>, _>>()?;

    let opts = SearchOptions::new(config.top_k, config.nprobe.unwrap_or(index.params.nprobe));
    let mut hits = Vec::with_capacity(patches.len());
    let mut needed: BTreeMap<PatchKey, usize> = BTreeMap::new();
    for e in &embeddings {
        let found = index.search_with(e, &opts)?;
        for h in &found {
            let next = needed.len();
            needed.entry(h.key()).or_insert(next);
        }
        hits.push(found);
    }

    // Pool each distinct retrieved patch once.
    let keys: Vec<&PatchKey> = {
        let mut k: Vec<(&PatchKey, usize)> = needed.iter().map(|(k, i)| (k, *i)).collect();
        k.sort_by_key(|(_, i)| *i);
        k.into_iter().map(|(k, _)| k).collect()
    };
    let db_pixels = keys
        .iter()
        .map(|k| source.patch(k, input_size))
        .collect::<Result<Vec<_>, _>>()?;
    let db_refs: Vec<&Rgb32FImage> = db_pixels.iter().collect();
    let db_maps = encoder.feature_maps(&db_refs)?;
    let db_pooled: Vec<Pooled> = db_maps.iter().map(|m| verifier.pool(m)).collect::<Result<_, _>>()?;

    let mut pairs = Vec::new();
    let mut meta = Vec::new();
    for (patch, (found, qp)) in patches.iter().zip(hits.iter().zip(&query_pooled)) {
        for h in found {
            pairs.push((qp, &db_pooled[needed[&h.key()]]));
            meta.push((patch.slot, h));
        }
    }
    let scores = verifier.score_pooled(&pairs)?;
    Ok(meta
        .into_iter()
        .zip(scores)
        .map(|((query_slot, h), score)| ScoredMatch {
            query_slot,
            image_id: h.image_id.clone(),
            slot: h.slot,
            score,
        })
        .collect())
}

/// Full attribution of one query image: retrieval, verification and credit.
pub fn attribute_image(
    query_id: &str,
    query: &Rgb32FImage,
    index: &IvfPqIndex,
    encoder: &ConvEncoder,
    verifier: &VerifierModel,
    source: &dyn PatchSource,
    config: &AttributionConfig,
) -> Result<CreditReport, ApportionError> {
    let matches = verify_matches(query, index, encoder, verifier, source, config)?;
    Ok(apportion(query_id, &matches, config))
}
