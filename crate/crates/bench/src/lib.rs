//! Shared synthetic data for the benches and the scale smoke run.

use provenant::fingerprint::{EmbeddingRecord, PatchKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn noise(rng: &mut impl Rng, dim: usize, scale: f32) -> impl Iterator<Item = f32> + '_ {
    (0..dim).map(move |_| scale * rng.sample::<f32, _>(StandardNormal))
}

/// Unit vectors drawn around `clusters` random centers; 21 slots per pseudo image.
pub fn clustered_records(n: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| unit(noise(&mut rng, dim, 1.0).collect()))
        .collect();
    (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..clusters)];
            let v = c.iter().zip(noise(&mut rng, dim, spread)).map(|(a, b)| a + b).collect();
            EmbeddingRecord {
                key: PatchKey::new(&format!("v{}", i / 21), (i % 21) as u8),
                vector: unit(v),
            }
        })
        .collect()
}

/// Perturbed copies of randomly chosen records.
pub fn queries_near(records: &[EmbeddingRecord], count: usize, spread: f32, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = &records[rng.random_range(0..records.len())];
            let dim = r.vector.len();
            unit(
                r.vector
                    .iter()
                    .zip(noise(&mut rng, dim, spread))
                    .map(|(a, b)| a + b)
                    .collect(),
            )
        })
        .collect()
}
