use super::sgemm;

/// Square-kernel convolution followed by ReLU.
///
/// Activations use a channel-major batch layout `[C][N][H][W]`, so the layer
/// is one GEMM between the weights and the im2col matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Offset of the `cout x cin*k*k` weight block; biases follow it.
    pub offset: usize,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    /// Post-ReLU output.
    pub out: Vec<f32>,
}

impl Conv2d {
    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.k * self.k + self.cout
    }

    pub fn out_size(&self, h: usize) -> usize {
        (h + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, input: &[f32], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f32> {
        let cols_n = n * ho * wo;
        let mut cols = vec![0.0f32; self.patch_len() * cols_n];
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut cols[((c * self.k + ky) * self.k + kx) * cols_n..][..cols_n];
                    for img in 0..n {
                        let plane = &input[(c * n + img) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..][..w];
                            let dst = &mut row[(img * ho + oy) * wo..][..wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f32> {
        let cols_n = n * ho * wo;
        let mut out = vec![0.0f32; self.cin * n * h * w];
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &cols[((c * self.k + ky) * self.k + kx) * cols_n..][..cols_n];
                    for img in 0..n {
                        let plane = &mut out[(c * n + img) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * w..][..w];
                            let src = &row[(img * ho + oy) * wo..][..wo];
                            for (ox, s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &[f32], input: &[f32], n: usize, h: usize, w: usize) -> ConvCache {
        assert_eq!(input.len(), self.cin * n * h * w, "conv input shape");
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let cols = self.im2col(input, n, h, w, ho, wo);
        let cols_n = n * ho * wo;
        let weights = &params[self.offset..][..self.cout * self.patch_len()];
        let bias = &params[self.offset + self.cout * self.patch_len()..][..self.cout];
        let mut out = vec![0.0f32; self.cout * cols_n];
        for (o, b) in bias.iter().enumerate() {
            out[o * cols_n..][..cols_n].fill(*b);
        }
        sgemm(
            self.cout,
            self.patch_len(),
            cols_n,
            weights,
            false,
            &cols,
            false,
            &mut out,
            1.0,
            1.0,
        );
        for v in &mut out {
            *v = v.max(0.0);
        }
        ConvCache {
            cols,
            n,
            h,
            w,
            ho,
            wo,
            out,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient
    /// when `want_input` is set. `dout` is the gradient w.r.t. the post-ReLU output.
    pub fn backward(
        &self,
        params: &[f32],
        cache: &ConvCache,
        mut dout: Vec<f32>,
        grads: &mut [f32],
        want_input: bool,
    ) -> Option<Vec<f32>> {
        for (d, o) in dout.iter_mut().zip(&cache.out) {
            if *o <= 0.0 {
                *d = 0.0;
            }
        }
        let cols_n = cache.n * cache.ho * cache.wo;
        let plen = self.patch_len();
        let (gw, gb) = grads[self.offset..][..self.param_count()].split_at_mut(self.cout * plen);
        sgemm(self.cout, cols_n, plen, &dout, false, &cache.cols, true, gw, 1.0, 1.0);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dout[o * cols_n..][..cols_n].iter().sum::<f32>();
        }
        if !want_input {
            return None;
        }
        let weights = &params[self.offset..][..self.cout * plen];
        let mut dcols = vec![0.0f32; plen * cols_n];
        sgemm(
            plen, self.cout, cols_n, weights, true, &dout, false, &mut dcols, 1.0, 0.0,
        );
        Some(self.col2im(&dcols, cache.n, cache.h, cache.w, cache.ho, cache.wo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(conv: &Conv2d, params: &[f32], input: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
        let (ho, wo) = (conv.out_size(h), conv.out_size(w));
        let mut out = vec![0.0f32; conv.cout * n * ho * wo];
        let plen = conv.cin * conv.k * conv.k;
        for o in 0..conv.cout {
            for img in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = params[conv.offset + conv.cout * plen + o] as f64;
                        for c in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = params[conv.offset + o * plen + (c * conv.k + ky) * conv.k + kx];
                                    let xv = input[((c * n + img) * h + iy as usize) * w + ix as usize];
                                    acc += wv as f64 * xv as f64;
                                }
                            }
                        }
                        out[((o * n + img) * ho + oy) * wo + ox] = acc.max(0.0) as f32;
                    }
                }
            }
        }
        out
    }

    fn setup() -> (Conv2d, Vec<f32>, Vec<f32>) {
        let conv = Conv2d {
            cin: 2,
            cout: 3,
            k: 3,
            stride: 2,
            pad: 1,
            offset: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f32> = (0..conv.param_count() + 1)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let input: Vec<f32> = (0..2 * 2 * 7 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        (conv, params, input)
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let (conv, params, input) = setup();
        let cache = conv.forward(&params, &input, 2, 7, 6);
        let want = naive_forward(&conv, &params, &input, 2, 7, 6);
        assert_eq!((cache.ho, cache.wo), (4, 3));
        for (a, b) in cache.out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (conv, params, input) = setup();
        // Loss = sum(out * r) for a fixed random r.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cache = conv.forward(&params, &input, 2, 7, 6);
        let r: Vec<f32> = (0..cache.out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f32], x: &[f32]| -> f64 {
            naive_forward(&conv, p, x, 2, 7, 6)
                .iter()
                .zip(&r)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let mut grads = vec![0.0f32; params.len()];
        let dx = conv.backward(&params, &cache, r.clone(), &mut grads, true).unwrap();
        let h = 1e-2f32;
        let mask =
            |p: &[f32], x: &[f32]| -> Vec<bool> { conv.forward(p, x, 2, 7, 6).out.iter().map(|v| *v > 0.0).collect() };
        let base = mask(&params, &input);
        let mut checked = 0;
        for i in 1..params.len() {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[i] += h;
            dn[i] -= h;
            // Differences straddling a ReLU kink say nothing about the gradient.
            if mask(&up, &input) != base || mask(&dn, &input) != base {
                continue;
            }
            checked += 1;
            let fd = (loss(&up, &input) - loss(&dn, &input)) / (2.0 * h as f64);
            assert!(
                (fd - grads[i] as f64).abs() < 2e-3 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                grads[i]
            );
        }
        assert!(checked > 30, "only {checked} parameters checked");
        assert_eq!(grads[0], 0.0);
        for i in (0..input.len()).step_by(7) {
            let (mut up, mut dn) = (input.clone(), input.clone());
            up[i] += h;
            dn[i] -= h;
            if mask(&params, &up) != base || mask(&params, &dn) != base {
                continue;
            }
            let fd = (loss(&params, &up) - loss(&params, &dn)) / (2.0 * h as f64);
            assert!(
                (fd - dx[i] as f64).abs() < 2e-3 * (1.0 + fd.abs()),
                "input {i}: {fd} vs {}",
                dx[i]
            );
        }
    }
}
