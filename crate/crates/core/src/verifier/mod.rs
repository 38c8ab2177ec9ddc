//! Pairwise match verification over encoder feature maps.
//!
//! Each map is reduced by a 1x1 convolution, GeM-pooled over a fixed pyramid of
//! 55 windows and row-normalized. Two such descriptor matrices are correlated
//! into a 55 x 55 matrix that a small MLP scores in both orientations:
//! `score(a, b) = sigmoid(mlp(C_ab) + mlp(C_ba))`.

mod eval;
mod io;
mod mlp;
mod pool;
mod queue;
mod train;
mod window;

use image::Rgb32FImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{FeatureExtractor, FeatureMap, FingerprintError};
use crate::nn::he_std;
use crate::Digest256;

pub use eval::{auc, evaluate_pairs, median, EvalConfig, PairEvaluation, PairScore};
pub use io::{load_verifier, save_verifier};
pub use mlp::{Mlp, MlpTrace};
pub use pool::{correlate, pool_backward, pool_windows, Pooled, Reduction, GEM_EPS};
pub use queue::{NegativeQueue, QueueEntry};
pub use train::{train_verifier, VerifierTrainConfig, VerifierTrainReport};
pub use window::{generate_windows, Window, WINDOW_COUNT};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("feature map {height}x{width} is not square")]
    NonSquareMap { height: usize, width: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corpus has {found} images, training needs at least {needed}")]
    CorpusTooSmall { found: usize, needed: usize },
    #[error("training diverged: {0}")]
    DivergedTraining(String),
    #[error("held-out AUC {auc:.4} is below the configured floor {floor}")]
    BelowAucFloor { auc: f64, floor: f64 },
    #[error("invalid verifier config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct VerifierConfig {
    pub gem_power: f64,
    pub hidden: Vec<usize>,
    /// Reduced depth is the feature depth divided by this.
    pub reduction_factor: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            gem_power: 3.0,
            hidden: vec![512, 128],
            reduction_factor: 4,
        }
    }
}

/// Geometry of the feature maps a model accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MapShape {
    pub side: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierModel {
    pub config: VerifierConfig,
    pub shape: MapShape,
    pub params: Vec<f64>,
    reduction: Reduction,
    mlp: Mlp,
    windows: Vec<Window>,
}

fn layout(config: &VerifierConfig, shape: MapShape) -> Result<(Reduction, Mlp, Vec<Window>), VerifierError> {
    if config.reduction_factor == 0 || !shape.depth.is_multiple_of(config.reduction_factor) {
        return Err(VerifierError::Config(format!(
            "depth {} not divisible by reduction factor {}",
            shape.depth, config.reduction_factor
        )));
    }
    if !(config.gem_power.is_finite() && config.gem_power >= 1.0) {
        return Err(VerifierError::Config(format!(
            "GeM power {} must be at least 1",
            config.gem_power
        )));
    }
    if config.hidden.contains(&0) {
        return Err(VerifierError::Config("hidden layers must be non-empty".into()));
    }
    let windows = generate_windows(shape.side, shape.side)?;
    let reduction = Reduction {
        input_depth: shape.depth,
        output_depth: shape.depth / config.reduction_factor,
        offset: 0,
    };
    let mut sizes = vec![windows.len() * windows.len()];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let mlp = Mlp {
        sizes,
        offset: reduction.param_count() + 2,
    };
    Ok((reduction, mlp, windows))
}

impl VerifierModel {
    /// He-initialized hidden layers; the output layer starts at zero so an
    /// untrained model scores every pair 0.5.
    pub fn new(config: VerifierConfig, shape: MapShape, seed: u64) -> Result<Self, VerifierError> {
        let (reduction, mlp, windows) = layout(&config, shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; mlp.offset + mlp.param_count()];
        let bound = (1.0 / shape.depth as f64).sqrt();
        for p in &mut params[..reduction.output_depth * reduction.input_depth] {
            *p = rng.random_range(-bound..bound);
        }
        params[reduction.param_count() + 1] = 1.0;
        let mut at = mlp.offset;
        for w in mlp.sizes.windows(2).take(mlp.sizes.len() - 2) {
            let normal = Normal::new(0.0, he_std(w[0])).expect("finite std");
            for p in &mut params[at..][..w[0] * w[1]] {
                *p = normal.sample(&mut rng);
            }
            at += w[0] * w[1] + w[1];
        }
        Ok(VerifierModel {
            config,
            shape,
            params,
            reduction,
            mlp,
            windows,
        })
    }

    pub fn from_params(config: VerifierConfig, shape: MapShape, params: Vec<f64>) -> Result<Self, VerifierError> {
        let (reduction, mlp, windows) = layout(&config, shape)?;
        let want = mlp.offset + mlp.param_count();
        if params.len() != want {
            return Err(VerifierError::Checkpoint(format!(
                "expected {want} parameters, found {}",
                params.len()
            )));
        }
        Ok(VerifierModel {
            config,
            shape,
            params,
            reduction,
            mlp,
            windows,
        })
    }

    /// Zeroes every scorer weight and bias.
    pub fn zero_scorer(&mut self) {
        let start = self.mlp.offset;
        self.params[start..].fill(0.0);
    }

    fn input_affine_at(&self) -> usize {
        self.reduction.param_count()
    }

    /// `(shift, gain)` applied to correlation entries before the MLP: `(c - shift) * gain`.
    pub fn input_affine(&self) -> (f64, f64) {
        let at = self.input_affine_at();
        (self.params[at], self.params[at + 1])
    }

    pub fn set_input_affine(&mut self, shift: f64, gain: f64) {
        let at = self.input_affine_at();
        self.params[at] = shift;
        self.params[at + 1] = gain;
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn digest(&self) -> Digest256 {
        Digest256::of_f64s(&self.params)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn reduction(&self) -> &Reduction {
        &self.reduction
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    fn check_map(&self, map: &FeatureMap) -> Result<(), VerifierError> {
        if map.height != map.width {
            return Err(VerifierError::NonSquareMap {
                height: map.height,
                width: map.width,
            });
        }
        if map.height != self.shape.side || map.depth != self.shape.depth {
            return Err(VerifierError::ShapeMismatch(format!(
                "model expects {0}x{0}x{1} maps, got {2}x{3}x{4}",
                self.shape.side, self.shape.depth, map.height, map.width, map.depth
            )));
        }
        Ok(())
    }

    pub fn pool(&self, map: &FeatureMap) -> Result<Pooled, VerifierError> {
        self.check_map(map)?;
        pool_windows(map, &self.windows, &self.params, &self.reduction, self.config.gem_power)
    }

    /// Raw correlation rows `[C_ab, C_ba]` for every pair.
    fn pair_rows(&self, pairs: &[(&Pooled, &Pooled)]) -> Result<Vec<f64>, VerifierError> {
        let n = self.windows.len();
        let mut rows = Vec::with_capacity(pairs.len() * 2 * n * n);
        for (a, b) in pairs {
            let c = correlate(a, b)?;
            rows.extend_from_slice(&c);
            for j in 0..n {
                for i in 0..n {
                    rows.push(c[i * n + j]);
                }
            }
        }
        Ok(rows)
    }

    fn mlp_input(&self, rows: &[f64]) -> Vec<f64> {
        let (shift, gain) = self.input_affine();
        rows.iter().map(|c| (c - shift) * gain).collect()
    }

    /// Pre-sigmoid scores, `mlp(C_ab) + mlp(C_ba)`, for pooled pairs.
    pub fn logits(&self, pairs: &[(&Pooled, &Pooled)]) -> Result<Vec<f64>, VerifierError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.pair_rows(pairs)?;
        let trace = self.mlp.forward(&self.params, self.mlp_input(&rows), pairs.len() * 2);
        Ok(trace.output().chunks(2).map(|y| y[0] + y[1]).collect())
    }

    pub fn score_pooled(&self, pairs: &[(&Pooled, &Pooled)]) -> Result<Vec<f64>, VerifierError> {
        Ok(self.logits(pairs)?.into_iter().map(sigmoid).collect())
    }

    pub fn score_maps(&self, a: &FeatureMap, b: &FeatureMap) -> Result<f64, VerifierError> {
        let (pa, pb) = (self.pool(a)?, self.pool(b)?);
        Ok(self.score_pooled(&[(&pa, &pb)])?[0])
    }

    /// Scores two patches already resampled to the encoder input size.
    pub fn score_patches(
        &self,
        extractor: &dyn FeatureExtractor,
        a: &Rgb32FImage,
        b: &Rgb32FImage,
    ) -> Result<f64, VerifierError> {
        let maps = extractor.feature_maps(&[a, b])?;
        self.score_maps(&maps[0], &maps[1])
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn random_map(side: usize, depth: usize, rng: &mut impl Rng) -> FeatureMap {
        FeatureMap {
            height: side,
            width: side,
            depth,
            data: (0..side * side * depth)
                .map(|_| rng.random_range(0.0f32..1.0))
                .collect(),
        }
    }

    fn small_config() -> VerifierConfig {
        VerifierConfig {
            hidden: vec![16, 8],
            ..VerifierConfig::default()
        }
    }

    #[test]
    fn untrained_model_scores_one_half() {
        let shape = MapShape { side: 8, depth: 16 };
        let model = VerifierModel::new(small_config(), shape, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (a, b) = (random_map(8, 16, &mut rng), random_map(8, 16, &mut rng));
            assert_eq!(model.score_maps(&a, &b).unwrap(), 0.5);
        }
    }

    #[test]
    fn score_is_symmetric_after_perturbing_weights() {
        let shape = MapShape { side: 8, depth: 16 };
        let mut model = VerifierModel::new(small_config(), shape, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in model.params.iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        for _ in 0..20 {
            let (a, b) = (random_map(8, 16, &mut rng), random_map(8, 16, &mut rng));
            let (ab, ba) = (model.score_maps(&a, &b).unwrap(), model.score_maps(&b, &a).unwrap());
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert!(ab > 0.0 && ab < 1.0 && ab != 0.5);
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let model = VerifierModel::new(small_config(), MapShape { side: 8, depth: 16 }, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = random_map(6, 16, &mut rng);
        assert!(matches!(model.pool(&bad), Err(VerifierError::ShapeMismatch(_))));
        let skew = FeatureMap {
            height: 8,
            width: 4,
            depth: 16,
            data: vec![0.5; 8 * 4 * 16],
        };
        assert!(matches!(model.pool(&skew), Err(VerifierError::NonSquareMap { .. })));
        assert!(VerifierModel::new(small_config(), MapShape { side: 8, depth: 10 }, 1).is_err());
    }
}
