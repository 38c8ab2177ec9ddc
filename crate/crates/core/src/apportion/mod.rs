//! Turning verified patch matches into per-image credit and royalty weights.
//!
//! For query patch `x_j` and database image `i`, the match weight is
//! `w_ij = sum_k max(score(x_j, x_k) - lambda, 0)` over the retrieved patches
//! `x_k` of image `i`. Each patch with any nonzero weight hands out one unit of
//! credit in proportion to its weights; image credit is the sum over patches.

mod pipeline;
mod settle;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pipeline::{attribute_image, verify_matches, CorpusPatches, PatchSource};
pub use settle::{settle_royalties, SettleError, SettleFailure, Settlement};

use crate::fingerprint::FingerprintError;
use crate::index::IndexError;
use crate::verifier::VerifierError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ApportionError {
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error("retrieved patch {image_id}#{slot} is not available from the patch source")]
    MissingPatch { image_id: String, slot: u8 },
    #[error("invalid attribution config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct AttributionConfig {
    /// Fingerprint hits retrieved per query patch.
    pub top_k: usize,
    /// Verifier score threshold.
    pub lambda: f64,
    /// Images sharing the royalty.
    pub top_m: usize,
    /// Inverted lists scanned per search; `None` uses the index default.
    pub nprobe: Option<usize>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            top_k: 30,
            lambda: 0.7,
            top_m: 5,
            nprobe: None,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<(), ApportionError> {
        if self.top_k == 0 || self.top_m == 0 {
            return Err(ApportionError::Config("topK and topM must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ApportionError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.nprobe == Some(0) {
            return Err(ApportionError::Config("nprobe must be positive".into()));
        }
        Ok(())
    }
}

/// One verified retrieval: query patch `query_slot` against patch
/// `slot` of `image_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoredMatch {
    pub query_slot: u8,
    pub image_id: String,
    pub slot: u8,
    pub score: f64,
}

/// `w_ij` keyed by query slot, then image id. Images whose hits all score at
/// or below `lambda` are absent.
pub type MatchWeights = BTreeMap<u8, BTreeMap<String, f64>>;

/// Match weights are rounded to multiples of `1 / WEIGHT_SCALE`
/// so decimal inputs give decimal results (`0.9 - 0.7` is `0.2`, not `0.2 + 2^-55`).
pub const WEIGHT_SCALE: f64 = 1e12;

fn quantize(w: f64) -> f64 {
    (w * WEIGHT_SCALE).round() / WEIGHT_SCALE
}

pub fn compute_weights(matches: &[ScoredMatch], lambda: f64) -> MatchWeights {
    let mut out: MatchWeights = BTreeMap::new();
    for m in matches {
        let excess = m.score - lambda;
        if excess > 0.0 {
            *out.entry(m.query_slot)
                .or_default()
                .entry(m.image_id.clone())
                .or_insert(0.0) += excess;
        }
    }
    for per_image in out.values_mut() {
        per_image.values_mut().for_each(|w| *w = quantize(*w));
        per_image.retain(|_, w| *w > 0.0);
    }
    out.retain(|_, per_image| !per_image.is_empty());
    out
}

/// Normalizes one patch's weights. Empty when no weight is positive.
pub fn credit_per_patch(weights: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = weights.values().filter(|w| **w > 0.0).sum();
    if total <= 0.0 {
        return BTreeMap::new();
    }
    weights
        .iter()
        .filter(|(_, w)| **w > 0.0)
        .map(|(id, w)| (id.clone(), w / total))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreditReport {
    pub version: u32,
    pub query_image_id: String,
    pub top_k: usize,
    pub top_m: usize,
    pub lambda: f64,
    /// Query slot to image id to credit fraction.
    pub per_patch_credits: BTreeMap<u8, BTreeMap<String, f64>>,
    pub image_credits: BTreeMap<String, f64>,
    /// Normalized over the `top_m` images with the most credit.
    pub royalty_weights: BTreeMap<String, f64>,
}

impl CreditReport {
    /// Image ids by descending credit, ties by id.
    pub fn ranking(&self) -> Vec<String> {
        let mut ids: Vec<(&String, f64)> = self.image_credits.iter().map(|(k, v)| (k, *v)).collect();
        ids.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ids.into_iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn total_credit(&self) -> f64 {
        self.image_credits.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.image_credits.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("credit report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ApportionError> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| ApportionError::Config(e.to_string()))?;
        if probe.version != REPORT_VERSION {
            return Err(ApportionError::Config(format!(
                "unsupported credit report version {}",
                probe.version
            )));
        }
        serde_json::from_str(text).map_err(|e| ApportionError::Config(e.to_string()))
    }
}

/// Sums per-patch credits and derives royalty weights over the top `config.top_m` images.
pub fn aggregate_credit(
    query_image_id: &str,
    per_patch_credits: BTreeMap<u8, BTreeMap<String, f64>>,
    config: &AttributionConfig,
) -> CreditReport {
    let mut image_credits: BTreeMap<String, f64> = BTreeMap::new();
    for credits in per_patch_credits.values() {
        for (id, c) in credits {
            *image_credits.entry(id.clone()).or_insert(0.0) += c;
        }
    }
    let mut report = CreditReport {
        version: REPORT_VERSION,
        query_image_id: query_image_id.to_string(),
        top_k: config.top_k,
        top_m: config.top_m,
        lambda: config.lambda,
        per_patch_credits,
        image_credits,
        royalty_weights: BTreeMap::new(),
    };
    let top: Vec<String> = report.ranking().into_iter().take(config.top_m).collect();
    let total: f64 = top.iter().map(|id| report.image_credits[id]).sum();
    if total > 0.0 {
        report.royalty_weights = top
            .into_iter()
            .map(|id| {
                let w = report.image_credits[&id] / total;
                (id, w)
            })
            .collect();
    }
    report
}

/// Weights, per-patch credit and aggregation in one step.
pub fn apportion(query_image_id: &str, matches: &[ScoredMatch], config: &AttributionConfig) -> CreditReport {
    let per_patch = compute_weights(matches, config.lambda)
        .into_iter()
        .map(|(slot, w)| (slot, credit_per_patch(&w)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    aggregate_credit(query_image_id, per_patch, config)
}

/// Fraction of the true sources found among the first `k` ranked images,
/// out of `min(|sources|, k)`. With `k = 1` this is 1 exactly when the top
/// image is a true source.
pub fn source_recall(ranking: &[String], sources: &[String], k: usize) -> f64 {
    if sources.is_empty() || k == 0 {
        return 0.0;
    }
    let found = ranking.iter().take(k).filter(|id| sources.contains(id)).count();
    found as f64 / sources.len().min(k) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(query_slot: u8, image_id: &str, slot: u8, score: f64) -> ScoredMatch {
        ScoredMatch {
            query_slot,
            image_id: image_id.into(),
            slot,
            score,
        }
    }

    #[test]
    fn single_hit_weight() {
        let w = compute_weights(&[hit(0, "a", 3, 0.9)], 0.7);
        assert_eq!(w[&0]["a"], 0.2);
    }

    #[test]
    fn hits_of_one_image_accumulate() {
        let w = compute_weights(&[hit(2, "a", 1, 0.8), hit(2, "a", 7, 0.75)], 0.7);
        assert_eq!(w[&2]["a"], 0.15);
    }

    #[test]
    fn scores_at_or_below_threshold_give_nothing() {
        let w = compute_weights(&[hit(0, "a", 1, 0.7), hit(0, "b", 1, 0.3)], 0.7);
        assert!(w.is_empty());
        let report = apportion("q", &[hit(0, "a", 1, 0.7)], &AttributionConfig::default());
        assert!(report.is_empty());
        assert!(report.royalty_weights.is_empty());
        assert_eq!(report.total_credit(), 0.0);
    }

    #[test]
    fn even_split_and_single_image() {
        let w: BTreeMap<String, f64> = [("A".to_string(), 0.2), ("B".to_string(), 0.2)].into();
        let c = credit_per_patch(&w);
        assert_eq!(c["A"], 0.5);
        assert_eq!(c["B"], 0.5);
        let c = credit_per_patch(&[("A".to_string(), 0.05)].into());
        assert_eq!(c["A"], 1.0);
        assert!(credit_per_patch(&[("A".to_string(), 0.0)].into()).is_empty());
    }

    #[test]
    fn all_patches_on_one_image() {
        let matches: Vec<_> = (0..21u8).map(|j| hit(j, "A", j, 0.95)).collect();
        let report = apportion("q", &matches, &AttributionConfig::default());
        assert_eq!(report.image_credits["A"], 21.0);
        assert_eq!(report.royalty_weights["A"], 1.0);
        assert_eq!(report.ranking(), vec!["A".to_string()]);
    }

    #[test]
    fn royalty_weights_cover_top_m_only() {
        let mut matches = Vec::new();
        for (j, id) in ["a", "a", "a", "b", "b", "c", "d", "e", "f"].iter().enumerate() {
            matches.push(hit(j as u8, id, 0, 0.9));
        }
        let config = AttributionConfig {
            top_m: 3,
            ..AttributionConfig::default()
        };
        let report = apportion("q", &matches, &config);
        assert_eq!(report.image_credits.len(), 6);
        assert_eq!(report.royalty_weights.len(), 3);
        // c, d, e, f tie at 1; ids break the tie.
        assert_eq!(report.ranking()[..3], ["a", "b", "c"]);
        assert!((report.royalty_weights["a"] - 0.5).abs() < 1e-12);
        assert!((report.royalty_weights.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_json_round_trip_and_version() {
        let report = apportion(
            "q",
            &[hit(0, "a", 1, 0.9), hit(1, "b", 2, 0.8)],
            &AttributionConfig::default(),
        );
        let text = report.to_json();
        assert_eq!(CreditReport::from_json(&text).unwrap(), report);
        let bumped = text.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(CreditReport::from_json(&bumped).is_err());
    }

    #[test]
    fn recall_definitions() {
        let ranking: Vec<String> = ["a", "x", "b", "y", "z", "c"].iter().map(|s| s.to_string()).collect();
        let sources: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(source_recall(&ranking, &sources, 1), 1.0);
        assert!((source_recall(&ranking, &sources, 5) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(source_recall(&ranking, &sources, 6), 1.0);
        assert_eq!(source_recall(&ranking[1..], &sources, 1), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AttributionConfig::default().validate().is_ok());
        let bad = AttributionConfig {
            lambda: 1.5,
            ..AttributionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
