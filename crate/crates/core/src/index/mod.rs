//! Approximate nearest-neighbour search over patch fingerprints.
//!
//! An inverted file partitions vectors by their nearest coarse centroid; within
//! each list the residual to that centroid is product-quantized. Searches scan
//! the closest lists with table-based asymmetric distances and re-rank a
//! shortlist by exact cosine against the full vectors.

mod file;
mod kmeans;
mod pq;

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{EmbeddingRecord, PatchKey};
use crate::Digest256;

pub use file::{load_index, load_vectors, save_index, save_vectors};
pub use kmeans::{assign, kmeans, KMeans, KMeansParams};
pub use pq::ProductQuantizer;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("{count} vectors cannot train {nlist} lists (need at least {needed})")]
    TooFewVectors { count: usize, nlist: usize, needed: usize },
    #[error("dimension {dim} is not divisible by m = {m}")]
    DimensionMismatch { dim: usize, m: usize },
    #[error("expected {expected}-dimensional vector, got {found}")]
    VectorLength { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid index parameters: {0}")]
    Params(String),
    #[error("malformed index file: {0}")]
    Format(String),
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct IndexParams {
    pub nlist: usize,
    pub m: usize,
    pub nprobe: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// k-means trains on at most this many points per centroid (a seeded subsample).
    pub max_points_per_centroid: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            nlist: 1024,
            m: 16,
            nprobe: 16,
            max_iters: 100,
            tol: 1e-4,
            max_points_per_centroid: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub record: u32,
    pub code: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetrievalHit {
    pub image_id: String,
    pub slot: u8,
    pub record: u32,
    pub approx_distance: f32,
    pub exact_similarity: f64,
    pub rank: usize,
}

impl RetrievalHit {
    pub fn key(&self) -> PatchKey {
        PatchKey::new(&self.image_id, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub top_k: usize,
    pub nprobe: usize,
    /// Shortlist size as a multiple of `top_k`; `None` re-ranks every scanned code.
    pub shortlist_factor: Option<usize>,
}

impl SearchOptions {
    pub fn new(top_k: usize, nprobe: usize) -> Self {
        SearchOptions {
            top_k,
            nprobe,
            shortlist_factor: Some(4),
        }
    }

    /// Scans every list and re-ranks every record.
    pub fn exhaustive(top_k: usize, nlist: usize) -> Self {
        SearchOptions {
            top_k,
            nprobe: nlist,
            shortlist_factor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfPqIndex {
    pub dim: usize,
    pub params: IndexParams,
    /// `nlist x dim`.
    pub coarse_centroids: Vec<f32>,
    pub pq: ProductQuantizer,
    pub postings: Vec<Vec<Posting>>,
    pub records: Vec<PatchKey>,
    /// Full vectors in record order, used for re-ranking.
    pub vectors: Vec<f32>,
}

/// Cosine similarity in double precision. Brute force and re-ranking share it,
/// so both produce bit-identical scores.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn hit_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.exact_similarity
        .total_cmp(&a.exact_similarity)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then(a.slot.cmp(&b.slot))
}

fn finish(mut hits: Vec<RetrievalHit>, top_k: usize) -> Vec<RetrievalHit> {
    hits.sort_by(hit_order);
    hits.truncate(top_k);
    for (i, h) in hits.iter_mut().enumerate() {
        h.rank = i + 1;
    }
    hits
}

fn sq_l2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact top-K by cosine, ties broken by `(imageId, slot)`.
pub fn brute_force_search(records: &[EmbeddingRecord], query: &[f32], top_k: usize) -> Vec<RetrievalHit> {
    let hits = records
        .iter()
        .enumerate()
        .map(|(i, r)| RetrievalHit {
            image_id: r.key.image_id.clone(),
            slot: r.key.slot,
            record: i as u32,
            approx_distance: sq_l2(&r.vector, query),
            exact_similarity: cosine(&r.vector, query),
            rank: 0,
        })
        .collect();
    finish(hits, top_k)
}

fn subsample(data: &[f32], dim: usize, limit: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / dim;
    if n <= limit {
        return data.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, n, limit).into_vec();
    picks.sort_unstable();
    picks
        .iter()
        .flat_map(|&i| data[i * dim..][..dim].iter().copied())
        .collect()
}

/// Builds an index over `records`; record ids follow input order.
pub fn build_index(records: &[EmbeddingRecord], params: &IndexParams) -> Result<IvfPqIndex, IndexError> {
    let Some(first) = records.first() else {
        return Err(IndexError::TooFewVectors {
            count: 0,
            nlist: params.nlist,
            needed: params.nlist * 4,
        });
    };
    let dim = first.vector.len();
    if params.m == 0 || dim % params.m != 0 {
        return Err(IndexError::DimensionMismatch { dim, m: params.m });
    }
    if params.nlist == 0 || params.nprobe == 0 {
        return Err(IndexError::Params("nlist and nprobe must be positive".into()));
    }
    let needed = params.nlist * 4;
    if records.len() < needed {
        return Err(IndexError::TooFewVectors {
            count: records.len(),
            nlist: params.nlist,
            needed,
        });
    }
    if records.len() > u32::MAX as usize {
        return Err(IndexError::Params("more than 2^32 records".into()));
    }
    let mut vectors = Vec::with_capacity(records.len() * dim);
    for r in records {
        if r.vector.len() != dim {
            return Err(IndexError::VectorLength {
                expected: dim,
                found: r.vector.len(),
            });
        }
        vectors.extend_from_slice(&r.vector);
    }

    let kparams = |k: usize, seed: u64| KMeansParams {
        k,
        max_iters: params.max_iters,
        tol: params.tol,
        seed,
    };
    let coarse_train = subsample(
        &vectors,
        dim,
        params.nlist * params.max_points_per_centroid,
        params.seed,
    );
    let coarse = kmeans(&coarse_train, dim, &kparams(params.nlist, params.seed));
    let lists = assign(&vectors, dim, &coarse.centroids);

    let mut residuals = vectors.clone();
    for (i, &(c, _)) in lists.iter().enumerate() {
        let centroid = &coarse.centroids[c * dim..][..dim];
        for (r, v) in residuals[i * dim..][..dim].iter_mut().zip(centroid) {
            *r -= v;
        }
    }
    let pq_seed = params.seed.wrapping_add(0x5eed);
    let pq_train = subsample(&residuals, dim, 256 * params.max_points_per_centroid, pq_seed);
    let pq = ProductQuantizer::train(&pq_train, dim, params.m, &kparams(256, pq_seed));
    let codes = pq.encode(&residuals);

    let mut postings = vec![Vec::new(); params.nlist];
    for (i, &(c, _)) in lists.iter().enumerate() {
        postings[c].push(Posting {
            record: i as u32,
            code: codes[i * params.m..][..params.m].to_vec(),
        });
    }
    Ok(IvfPqIndex {
        dim,
        params: *params,
        coarse_centroids: coarse.centroids,
        pq,
        postings,
        records: records.iter().map(|r| r.key.clone()).collect(),
        vectors,
    })
}

impl IvfPqIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn nlist(&self) -> usize {
        self.postings.len()
    }

    pub fn vector(&self, record: u32) -> &[f32] {
        &self.vectors[record as usize * self.dim..][..self.dim]
    }

    /// Search with the index's default `nprobe` and a `4 x top_k` shortlist.
    pub fn search(&self, query: &[f32], top_k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        self.search_with(query, &SearchOptions::new(top_k, self.params.nprobe))
    }

    pub fn search_with(&self, query: &[f32], opts: &SearchOptions) -> Result<Vec<RetrievalHit>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::VectorLength {
                expected: self.dim,
                found: query.len(),
            });
        }
        if opts.top_k == 0 {
            return Ok(Vec::new());
        }
        let nprobe = opts.nprobe.clamp(1, self.nlist());
        let mut lists: Vec<(f32, usize)> = self
            .coarse_centroids
            .chunks(self.dim)
            .enumerate()
            .map(|(l, c)| (sq_l2(query, c), l))
            .collect();
        lists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut candidates: Vec<(f32, u32)> = Vec::new();
        let mut residual = vec![0.0f32; self.dim];
        for &(_, l) in &lists[..nprobe] {
            if self.postings[l].is_empty() {
                continue;
            }
            let centroid = &self.coarse_centroids[l * self.dim..][..self.dim];
            for ((r, q), c) in residual.iter_mut().zip(query).zip(centroid) {
                *r = q - c;
            }
            let table = self.pq.distance_table(&residual);
            candidates.extend(
                self.postings[l]
                    .iter()
                    .map(|p| (self.pq.adc(&table, &p.code), p.record)),
            );
        }
        let by_distance = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if let Some(factor) = opts.shortlist_factor {
            let keep = opts.top_k.saturating_mul(factor.max(1));
            if candidates.len() > keep {
                candidates.select_nth_unstable_by(keep - 1, by_distance);
                candidates.truncate(keep);
            }
        }
        let hits = candidates
            .into_iter()
            .map(|(d, rec)| {
                let key = &self.records[rec as usize];
                RetrievalHit {
                    image_id: key.image_id.clone(),
                    slot: key.slot,
                    record: rec,
                    approx_distance: d,
                    exact_similarity: cosine(self.vector(rec), query),
                    rank: 0,
                }
            })
            .collect();
        Ok(finish(hits, opts.top_k))
    }

    /// SHA-256 of the serialized index file.
    pub fn digest(&self) -> Digest256 {
        Digest256::of(&file::encode_index(self))
    }
}

/// Fraction of the exact top-K that the approximate top-K recovers.
pub fn recall_at_k(approx: &[RetrievalHit], exact: &[RetrievalHit]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let found = exact
        .iter()
        .filter(|e| approx.iter().any(|a| a.record == e.record))
        .count();
    found as f64 / exact.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(v: &mut [f32]) {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }

    pub(crate) fn random_records(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                unit(&mut v);
                EmbeddingRecord {
                    key: PatchKey::new(&format!("img-{:05}", i / 21), (i % 21) as u8),
                    vector: v,
                }
            })
            .collect()
    }

    fn small_params(nlist: usize, m: usize) -> IndexParams {
        IndexParams {
            nlist,
            m,
            nprobe: nlist,
            seed: 3,
            ..IndexParams::default()
        }
    }

    #[test]
    fn indivisible_dimension_is_rejected() {
        let recs = random_records(64, 256, 1);
        let err = build_index(&recs, &small_params(4, 3)).unwrap_err();
        assert!(matches!(err, IndexError::DimensionMismatch { dim: 256, m: 3 }));
    }

    #[test]
    fn too_few_vectors_is_rejected() {
        let recs = random_records(15, 16, 1);
        let err = build_index(&recs, &small_params(4, 4)).unwrap_err();
        assert!(matches!(
            err,
            IndexError::TooFewVectors {
                count: 15,
                needed: 16,
                ..
            }
        ));
    }

    #[test]
    fn every_record_in_exactly_one_list() {
        let recs = random_records(400, 32, 2);
        let idx = build_index(&recs, &small_params(8, 8)).unwrap();
        let mut seen: Vec<u32> = idx.postings.iter().flatten().map(|p| p.record).collect();
        seen.sort();
        assert_eq!(seen, (0..400).collect::<Vec<u32>>());
        for (l, list) in idx.postings.iter().enumerate() {
            for p in list {
                let nearest = assign(idx.vector(p.record), 32, &idx.coarse_centroids)[0].0;
                assert_eq!(nearest, l);
            }
        }
    }

    #[test]
    fn self_query_ranks_first_with_unit_similarity() {
        let recs = random_records(300, 32, 4);
        let idx = build_index(&recs, &small_params(4, 8)).unwrap();
        for i in (0..300).step_by(37) {
            let hits = idx.search_with(&recs[i].vector, &SearchOptions::new(5, 4)).unwrap();
            assert_eq!(hits[0].record, i as u32);
            assert!((hits[0].exact_similarity - 1.0).abs() < 1e-6);
            assert_eq!(hits[0].rank, 1);
        }
    }

    #[test]
    fn single_list_is_flat_pq() {
        let recs = random_records(200, 16, 5);
        let idx = build_index(&recs, &small_params(1, 4)).unwrap();
        assert_eq!(idx.postings[0].len(), 200);
        let q = &recs[17].vector;
        let hits = idx.search(q, 3).unwrap();
        assert_eq!(hits[0].record, 17);
        let exact = brute_force_search(&recs, q, 3);
        assert_eq!(hits[0].exact_similarity, exact[0].exact_similarity);
    }

    #[test]
    fn top_k_beyond_size_returns_everything_sorted() {
        let recs = random_records(40, 8, 6);
        let idx = build_index(&recs, &small_params(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hits = idx.search_with(&q, &SearchOptions::new(100, 2)).unwrap();
        assert_eq!(hits.len(), 40);
        assert!(hits.windows(2).all(|w| w[0].exact_similarity >= w[1].exact_similarity));
    }

    #[test]
    fn brute_force_ties_follow_key_order() {
        let v = vec![1.0f32, 0.0, 0.0, 0.0];
        let recs: Vec<EmbeddingRecord> = ["b", "a", "c"]
            .iter()
            .flat_map(|id| {
                [3u8, 1].map(|s| EmbeddingRecord {
                    key: PatchKey::new(id, s),
                    vector: v.clone(),
                })
            })
            .collect();
        let hits = brute_force_search(&recs, &[0.0, 1.0, 0.0, 0.0], 6);
        let keys: Vec<(String, u8)> = hits.iter().map(|h| (h.image_id.clone(), h.slot)).collect();
        assert_eq!(keys[0], ("a".to_string(), 1));
        assert_eq!(keys[1], ("a".to_string(), 3));
        assert_eq!(keys[5], ("c".to_string(), 3));
        assert!(hits.iter().all(|h| h.exact_similarity == 0.0));
        let single = brute_force_search(&recs[..1], &v, 5);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].rank, 1);
    }

    #[test]
    fn empty_index_refuses_search() {
        let recs = random_records(40, 8, 6);
        let mut idx = build_index(&recs, &small_params(2, 2)).unwrap();
        idx.records.clear();
        assert!(matches!(idx.search(&recs[0].vector, 1), Err(IndexError::EmptyIndex)));
    }
}
