use crate::nn::dgemm;

/// Fully connected layers with ReLU between them and a linear output.
///
/// Each layer stores `out x in` weights followed by `out` biases, starting at `offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub offset: usize,
}

/// Activations kept for the backward pass; `acts[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub n: usize,
    acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

impl Mlp {
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut at = self.offset;
        self.sizes
            .windows(2)
            .map(|w| {
                let here = at;
                at += w[0] * w[1] + w[1];
                here
            })
            .collect()
    }

    /// Offsets of the final layer's weights and bias.
    pub fn last_layer(&self) -> (usize, usize) {
        let l = self.sizes.len() - 2;
        let at = self.layer_offsets()[l];
        (at, self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1])
    }

    /// `input` is row-major `n x sizes[0]`.
    pub fn forward(&self, params: &[f64], input: Vec<f64>, n: usize) -> MlpTrace {
        assert_eq!(input.len(), n * self.sizes[0]);
        let layers = self.sizes.len() - 1;
        let mut acts = vec![input];
        for (l, at) in self.layer_offsets().into_iter().enumerate() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[at..][..fin * fout];
            let b = &params[at + fin * fout..][..fout];
            let mut out = Vec::with_capacity(n * fout);
            for _ in 0..n {
                out.extend_from_slice(b);
            }
            dgemm(n, fin, fout, &acts[l], false, w, true, &mut out, 1.0, 1.0);
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        MlpTrace { n, acts }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, params: &[f64], trace: &MlpTrace, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let n = trace.n;
        let offsets = self.layer_offsets();
        let mut delta = d_out.to_vec();
        for l in (0..offsets.len()).rev() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            let at = offsets[l];
            let (gw, gb) = grads[at..][..fin * fout + fout].split_at_mut(fin * fout);
            dgemm(fout, n, fin, &delta, true, &trace.acts[l], false, gw, 1.0, 1.0);
            for row in delta.chunks(fout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let w = &params[at..][..fin * fout];
            let mut prev = vec![0.0; n * fin];
            dgemm(n, fout, fin, &delta, false, w, false, &mut prev, 1.0, 0.0);
            if l > 0 {
                for (g, a) in prev.iter_mut().zip(&trace.acts[l]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}
