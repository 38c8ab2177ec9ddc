use super::window::Window;
use super::VerifierError;
use crate::fingerprint::FeatureMap;

/// Activations below this are clamped before the GeM power so the mean stays
/// positive and differentiable.
pub const GEM_EPS: f64 = 1e-6;

/// 1x1 convolution `depth -> depth / 4` stored in a flat parameter buffer:
/// `out x in` weights at `offset`, then `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduction {
    pub input_depth: usize,
    pub output_depth: usize,
    pub offset: usize,
}

impl Reduction {
    pub fn param_count(&self) -> usize {
        self.output_depth * self.input_depth + self.output_depth
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params[self.offset..][..self.param_count()].split_at(self.output_depth * self.input_depth)
    }

    /// Reduced map, position-major `(y * width + x) * output_depth + c`.
    pub fn apply(&self, params: &[f64], map: &FeatureMap) -> Vec<f64> {
        let (w, b) = self.split(params);
        let positions = map.height * map.width;
        let mut out = Vec::with_capacity(positions * self.output_depth);
        for pos in 0..positions {
            let x = &map.data[pos * map.depth..][..map.depth];
            for c in 0..self.output_depth {
                let row = &w[c * self.input_depth..][..self.input_depth];
                let mut acc = b[c];
                for (wi, xi) in row.iter().zip(x) {
                    acc += wi * *xi as f64;
                }
                out.push(acc);
            }
        }
        out
    }
}

/// Window descriptors of one feature map plus what backpropagation needs.
#[derive(Debug, Clone)]
pub struct Pooled {
    /// `windows x depth`, rows unit-normalized.
    pub rows: Vec<f64>,
    pub depth: usize,
    gem: Vec<f64>,
    norms: Vec<f64>,
    reduced: Vec<f64>,
}

impl Pooled {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.depth..][..self.depth]
    }
}

fn check(map: &FeatureMap, red: &Reduction) -> Result<(), VerifierError> {
    if map.depth != red.input_depth || map.data.len() != map.height * map.width * map.depth {
        return Err(VerifierError::ShapeMismatch(format!(
            "feature map {}x{}x{} for reduction from depth {}",
            map.height, map.width, map.depth, red.input_depth
        )));
    }
    Ok(())
}

/// Reduces, GeM-pools every window with power `p`, and unit-normalizes each row.
pub fn pool_windows(
    map: &FeatureMap,
    windows: &[Window],
    params: &[f64],
    red: &Reduction,
    p: f64,
) -> Result<Pooled, VerifierError> {
    check(map, red)?;
    if let Some(w) = windows
        .iter()
        .find(|w| w.x + w.side > map.width || w.y + w.side > map.height)
    {
        return Err(VerifierError::ShapeMismatch(format!(
            "window {w:?} outside {}x{} map",
            map.height, map.width
        )));
    }
    let d = red.output_depth;
    let reduced = red.apply(params, map);
    let powered: Vec<f64> = reduced.iter().map(|&v| v.max(GEM_EPS).powf(p)).collect();
    let mut gem = vec![0.0; windows.len() * d];
    for (wi, w) in windows.iter().enumerate() {
        let out = &mut gem[wi * d..][..d];
        for y in w.y..w.y + w.side {
            for x in w.x..w.x + w.side {
                for (o, v) in out.iter_mut().zip(&powered[(y * map.width + x) * d..][..d]) {
                    *o += v;
                }
            }
        }
        let area = w.area() as f64;
        for o in out.iter_mut() {
            *o = (*o / area).powf(1.0 / p);
        }
    }
    let mut rows = gem.clone();
    let mut norms = Vec::with_capacity(windows.len());
    for row in rows.chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok(Pooled {
        rows,
        depth: d,
        gem,
        norms,
        reduced,
    })
}

/// Accumulates reduction gradients given `d_rows`, the gradient w.r.t. the normalized rows.
pub fn pool_backward(
    map: &FeatureMap,
    windows: &[Window],
    pooled: &Pooled,
    red: &Reduction,
    p: f64,
    d_rows: &[f64],
    grads: &mut [f64],
) {
    let d = red.output_depth;
    let mut d_reduced = vec![0.0; pooled.reduced.len()];
    for (wi, w) in windows.iter().enumerate() {
        let u = pooled.row(wi);
        let g = &d_rows[wi * d..][..d];
        let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        let n = pooled.norms[wi];
        let area = w.area() as f64;
        for c in 0..d {
            let d_gem = (g[c] - u[c] * dot) / n;
            if d_gem == 0.0 {
                continue;
            }
            // d/dr of (mean r^p)^(1/p) = f^(1-p) * r^(p-1) / area, for r above the clamp.
            let f = pooled.gem[wi * d + c];
            let scale = d_gem * f.powf(1.0 - p) / area;
            for y in w.y..w.y + w.side {
                for x in w.x..w.x + w.side {
                    let idx = (y * map.width + x) * d + c;
                    let r = pooled.reduced[idx];
                    if r > GEM_EPS {
                        d_reduced[idx] += scale * r.powf(p - 1.0);
                    }
                }
            }
        }
    }
    let (gw, gb) = grads[red.offset..][..red.param_count()].split_at_mut(d * red.input_depth);
    for pos in 0..map.height * map.width {
        let x = &map.data[pos * map.depth..][..map.depth];
        for c in 0..d {
            let g = d_reduced[pos * d + c];
            if g == 0.0 {
                continue;
            }
            gb[c] += g;
            for (wv, xv) in gw[c * red.input_depth..][..red.input_depth].iter_mut().zip(x) {
                *wv += g * *xv as f64;
            }
        }
    }
}

/// `a * b^T` for two `n x d` descriptor matrices.
pub fn correlate(a: &Pooled, b: &Pooled) -> Result<Vec<f64>, VerifierError> {
    if a.depth != b.depth || a.rows.len() != b.rows.len() {
        return Err(VerifierError::ShapeMismatch(
            "descriptor matrices differ in shape".into(),
        ));
    }
    let d = a.depth;
    let n = a.rows.len() / d;
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let ra = a.row(i);
        for j in 0..n {
            c[i * n + j] = ra.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(c)
}
