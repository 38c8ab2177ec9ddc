use image::Rgb32FImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureMap, FingerprintError};
use crate::digest::Digest256;
use crate::nn::{he_std, sgemm, Conv2d, ConvCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct EncoderConfig {
    pub input_size: u32,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    /// Side of the average-pooling grid feeding the embedding head.
    pub pool_grid: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: 64,
            channels: vec![16, 32, 64, 64],
            strides: vec![2, 2, 2, 1],
            kernel: 3,
            pool_grid: 2,
            embed_dim: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        let bad = |m: &str| Err(FingerprintError::Config(m.to_string()));
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return bad("channels and strides must be non-empty and equally long");
        }
        if self.kernel.is_multiple_of(2) || self.strides.contains(&0) || self.channels.contains(&0) {
            return bad("kernel must be odd; strides and channels positive");
        }
        let side = self.feature_side();
        if side == 0 || self.pool_grid == 0 || !side.is_multiple_of(self.pool_grid) {
            return bad("feature map side must be a positive multiple of the pooling grid");
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be positive");
        }
        Ok(())
    }

    pub fn feature_side(&self) -> usize {
        let mut side = self.input_size as usize;
        for &s in &self.strides {
            let pad = self.kernel / 2;
            if side + 2 * pad < self.kernel {
                return 0;
            }
            side = (side + 2 * pad - self.kernel) / s + 1;
        }
        side
    }

    pub fn feature_depth(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    fn pooled_len(&self) -> usize {
        self.feature_depth() * self.pool_grid * self.pool_grid
    }
}

/// Small convolutional encoder producing a feature map and a pooled embedding.
///
/// Architecture: `channels.len()` conv+ReLU blocks, then average pooling on a
/// `pool_grid x pool_grid` grid, then a linear layer to `embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub config: EncoderConfig,
    pub params: Vec<f32>,
    convs: Vec<Conv2d>,
    head_offset: usize,
}

/// Forward-pass values kept for backpropagation.
pub struct EncoderTrace {
    n: usize,
    caches: Vec<ConvCache>,
    pooled: Vec<f32>,
    /// `n x embed_dim` un-normalised embeddings.
    pub raw: Vec<f32>,
}

fn layout(config: &EncoderConfig) -> (Vec<Conv2d>, usize, usize) {
    let mut convs = Vec::new();
    let mut offset = 0;
    let mut cin = 3;
    for (&cout, &stride) in config.channels.iter().zip(&config.strides) {
        let conv = Conv2d {
            cin,
            cout,
            k: config.kernel,
            stride,
            pad: config.kernel / 2,
            offset,
        };
        offset += conv.param_count();
        convs.push(conv);
        cin = cout;
    }
    let head_offset = offset;
    let total = offset + config.embed_dim * config.pooled_len() + config.embed_dim;
    (convs, head_offset, total)
}

impl ConvEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, FingerprintError> {
        config.validate()?;
        let (convs, head_offset, total) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; total];
        for conv in &convs {
            let fan_in = conv.cin * conv.k * conv.k;
            let normal = Normal::new(0.0, he_std(fan_in)).expect("finite std");
            for p in &mut params[conv.offset..][..conv.cout * fan_in] {
                *p = normal.sample(&mut rng) as f32;
            }
        }
        let fan_in = config.pooled_len();
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        for p in &mut params[head_offset..][..config.embed_dim * fan_in] {
            *p = rng.random_range(-bound..bound);
        }
        Ok(ConvEncoder {
            config,
            params,
            convs,
            head_offset,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f32>) -> Result<Self, FingerprintError> {
        config.validate()?;
        let (convs, head_offset, total) = layout(&config);
        if params.len() != total {
            return Err(FingerprintError::Checkpoint(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        Ok(ConvEncoder {
            config,
            params,
            convs,
            head_offset,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn digest(&self) -> Digest256 {
        Digest256::of_f32s(&self.params)
    }

    fn input_tensor(&self, images: &[&Rgb32FImage]) -> Result<Vec<f32>, FingerprintError> {
        let size = self.config.input_size;
        let n = images.len();
        let plane = (size * size) as usize;
        let mut data = vec![0.0f32; 3 * n * plane];
        for (i, img) in images.iter().enumerate() {
            if img.dimensions() != (size, size) {
                return Err(FingerprintError::ShapeMismatch(format!(
                    "encoder expects {size}x{size} input, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            for (p, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    // Centre inputs around zero.
                    data[(c * n + i) * plane + p] = px.0[c] - 0.5;
                }
            }
        }
        Ok(data)
    }

    pub fn forward(&self, images: &[&Rgb32FImage]) -> Result<EncoderTrace, FingerprintError> {
        let n = images.len();
        let mut x = self.input_tensor(images)?;
        let mut side = self.config.input_size as usize;
        let mut caches = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let cache = conv.forward(&self.params, &x, n, side, side);
            side = cache.ho;
            x = cache.out.clone();
            caches.push(cache);
        }
        let pooled = self.pool(&x, n, side);
        let raw = self.head(&pooled, n);
        Ok(EncoderTrace { n, caches, pooled, raw })
    }

    /// Average pooling over the grid; output is `pooled_len x n`.
    fn pool(&self, x: &[f32], n: usize, side: usize) -> Vec<f32> {
        let g = self.config.pool_grid;
        let cell = side / g;
        let d = self.config.feature_depth();
        let mut pooled = vec![0.0f32; d * g * g * n];
        let scale = 1.0 / (cell * cell) as f32;
        for c in 0..d {
            for img in 0..n {
                let plane = &x[(c * n + img) * side * side..][..side * side];
                for y in 0..side {
                    for xx in 0..side {
                        let f = c * g * g + (y / cell) * g + xx / cell;
                        pooled[f * n + img] += plane[y * side + xx] * scale;
                    }
                }
            }
        }
        pooled
    }

    /// Linear head; returns `n x embed_dim`.
    fn head(&self, pooled: &[f32], n: usize) -> Vec<f32> {
        let e = self.config.embed_dim;
        let f = self.config.pooled_len();
        let w = &self.params[self.head_offset..][..e * f];
        let b = &self.params[self.head_offset + e * f..][..e];
        let mut out_t = vec![0.0f32; e * n];
        for (row, bias) in out_t.chunks_mut(n).zip(b) {
            row.fill(*bias);
        }
        sgemm(e, f, n, w, false, pooled, false, &mut out_t, 1.0, 1.0);
        let mut out = vec![0.0f32; n * e];
        for k in 0..e {
            for i in 0..n {
                out[i * e + k] = out_t[k * n + i];
            }
        }
        out
    }

    /// Backpropagates `d_raw` (`n x embed_dim`) and returns the parameter gradient.
    pub fn backward(&self, trace: &EncoderTrace, d_raw: &[f32]) -> Vec<f32> {
        let n = trace.n;
        let e = self.config.embed_dim;
        let f = self.config.pooled_len();
        let mut grads = vec![0.0f32; self.params.len()];
        let mut d_t = vec![0.0f32; e * n];
        for i in 0..n {
            for k in 0..e {
                d_t[k * n + i] = d_raw[i * e + k];
            }
        }
        {
            let (gw, gb) = grads[self.head_offset..].split_at_mut(e * f);
            sgemm(e, n, f, &d_t, false, &trace.pooled, true, gw, 1.0, 1.0);
            for (k, g) in gb.iter_mut().enumerate() {
                *g += d_t[k * n..][..n].iter().sum::<f32>();
            }
        }
        let w = &self.params[self.head_offset..][..e * f];
        let mut d_pooled = vec![0.0f32; f * n];
        sgemm(f, e, n, w, true, &d_t, false, &mut d_pooled, 1.0, 0.0);

        let last = trace.caches.last().expect("at least one conv");
        let side = last.ho;
        let g = self.config.pool_grid;
        let cell = side / g;
        let d = self.config.feature_depth();
        let scale = 1.0 / (cell * cell) as f32;
        let mut dx = vec![0.0f32; d * n * side * side];
        for c in 0..d {
            for img in 0..n {
                let plane = &mut dx[(c * n + img) * side * side..][..side * side];
                for y in 0..side {
                    for xx in 0..side {
                        let fi = c * g * g + (y / cell) * g + xx / cell;
                        plane[y * side + xx] = d_pooled[fi * n + img] * scale;
                    }
                }
            }
        }
        for (idx, conv) in self.convs.iter().enumerate().rev() {
            match conv.backward(&self.params, &trace.caches[idx], dx, &mut grads, idx > 0) {
                Some(next) => dx = next,
                None => break,
            }
        }
        grads
    }

    /// Feature maps (`H x W x D`, post-ReLU) from a trace.
    pub fn maps_from_trace(&self, trace: &EncoderTrace) -> Vec<FeatureMap> {
        let last = trace.caches.last().expect("at least one conv");
        let (n, side, d) = (trace.n, last.ho, self.config.feature_depth());
        (0..n)
            .map(|img| {
                let mut data = vec![0.0f32; side * side * d];
                for c in 0..d {
                    let plane = &last.out[(c * n + img) * side * side..][..side * side];
                    for (pos, v) in plane.iter().enumerate() {
                        data[pos * d + c] = *v;
                    }
                }
                FeatureMap {
                    height: side,
                    width: side,
                    depth: d,
                    data,
                }
            })
            .collect()
    }
}

pub fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_size: 16,
            channels: vec![4, 6],
            strides: vec![2, 2],
            kernel: 3,
            pool_grid: 2,
            embed_dim: 5,
        }
    }

    fn images(n: usize, size: u32) -> Vec<Rgb32FImage> {
        (0..n)
            .map(|k| {
                Rgb32FImage::from_fn(size, size, |x, y| {
                    let t = (x * 3 + y * 5 + k as u32 * 7) as f32;
                    image::Rgb([
                        (t * 0.13).sin() * 0.5 + 0.5,
                        (t * 0.07).cos() * 0.5 + 0.5,
                        ((x ^ y) % 5) as f32 / 5.0,
                    ])
                })
            })
            .collect()
    }

    #[test]
    fn default_geometry() {
        let cfg = EncoderConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.feature_side(), 8);
        assert_eq!(cfg.feature_depth(), 64);
        assert_eq!(cfg.pooled_len(), 256);
        let bad = EncoderConfig {
            strides: vec![2],
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_forward_equals_single_forward() {
        let enc = ConvEncoder::new(tiny(), 1).unwrap();
        let imgs = images(3, 16);
        let refs: Vec<&Rgb32FImage> = imgs.iter().collect();
        let batch = enc.forward(&refs).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            let single = enc.forward(&[img]).unwrap();
            for k in 0..5 {
                assert!((single.raw[k] - batch.raw[i * 5 + k]).abs() < 1e-5);
            }
        }
        let maps = enc.maps_from_trace(&batch);
        assert_eq!(maps.len(), 3);
        assert_eq!((maps[0].height, maps[0].width, maps[0].depth), (4, 4, 6));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = ConvEncoder::new(tiny(), 2).unwrap();
        let imgs = images(2, 16);
        let refs: Vec<&Rgb32FImage> = imgs.iter().collect();
        let r: Vec<f32> = (0..10).map(|i| ((i * 37 % 11) as f32 - 5.0) / 5.0).collect();
        let loss = |e: &ConvEncoder| -> f64 {
            let t = e.forward(&refs).unwrap();
            t.raw.iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let trace = enc.forward(&refs).unwrap();
        let grads = enc.backward(&trace, &r);
        let mask = |e: &ConvEncoder| -> Vec<bool> {
            let t = e.forward(&refs).unwrap();
            t.caches.iter().flat_map(|c| c.out.iter().map(|v| *v > 0.0)).collect()
        };
        let base = mask(&enc);
        let h = 1e-2f32;
        let mut checked = 0;
        for i in (0..enc.params.len()).step_by(3) {
            let mut up = enc.clone();
            up.params[i] += h;
            let mut dn = enc.clone();
            dn.params[i] -= h;
            // Skip differences that cross a ReLU kink.
            if mask(&up) != base || mask(&dn) != base {
                continue;
            }
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h as f64);
            assert!(
                (fd - grads[i] as f64).abs() < 5e-3 * (1.0 + fd.abs()),
                "param {i}: fd {fd} analytic {}",
                grads[i]
            );
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ConvEncoder::new(EncoderConfig::default(), 9).unwrap();
        let b = ConvEncoder::new(EncoderConfig::default(), 9).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(
            a.digest(),
            ConvEncoder::new(EncoderConfig::default(), 10).unwrap().digest()
        );
    }
}
