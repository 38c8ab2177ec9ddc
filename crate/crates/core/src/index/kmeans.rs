use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::sgemm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the summed squared centroid movement falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iters: 100,
            tol: 1e-4,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    pub centroids: Vec<f32>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid for every row of `data`, ties to the lowest index.
pub fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> Vec<(usize, f32)> {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let c_norms: Vec<f32> = centroids.chunks(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut out = Vec::with_capacity(n);
    const BLOCK: usize = 1024;
    let mut dots = vec![0.0f32; BLOCK * k];
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        let block = &data[start * dim..(start + rows) * dim];
        sgemm(
            rows,
            dim,
            k,
            block,
            false,
            centroids,
            true,
            &mut dots[..rows * k],
            1.0,
            0.0,
        );
        for r in 0..rows {
            let x = &block[r * dim..][..dim];
            let x_norm: f32 = x.iter().map(|v| v * v).sum();
            let row = &dots[r * k..][..k];
            let mut best = (0, f32::INFINITY);
            for (j, d) in row.iter().enumerate() {
                let dist = (x_norm - 2.0 * d + c_norms[j]).max(0.0);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            out.push(best);
        }
    }
    out
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans(data: &[f32], dim: usize, params: &KMeansParams) -> KMeans {
    let n = data.len() / dim;
    let k = params.k;
    assert!(k >= 1 && n >= k, "k-means needs at least k points");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut nearest: Vec<f32> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().map(|&d| d as f64).sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                target -= d as f64;
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut iterations = 0;
    for _ in 0..params.max_iters {
        iterations += 1;
        let assignment = assign(data, dim, &centroids);
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..][..dim].iter_mut().zip(row(i)) {
                *s += *v as f64;
            }
        }
        let mut moved = 0.0f64;
        // Empty clusters restart at the points currently worst served.
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
        let mut spare = worst.into_iter();
        for c in 0..k {
            let new: Vec<f32> = if counts[c] == 0 {
                row(spare.next().expect("n >= k")).to_vec()
            } else {
                sums[c * dim..][..dim]
                    .iter()
                    .map(|s| (s / counts[c] as f64) as f32)
                    .collect()
            };
            moved += sq_dist(&new, &centroids[c * dim..][..dim]) as f64;
            centroids[c * dim..][..dim].copy_from_slice(&new);
        }
        if moved < params.tol {
            break;
        }
    }
    KMeans {
        dim,
        centroids,
        iterations,
    }
}
