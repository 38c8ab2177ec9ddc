use super::kmeans::{assign, kmeans, KMeansParams};

/// Splits vectors into `m` contiguous subspaces, each quantized to `ksub` centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQuantizer {
    pub dim: usize,
    pub m: usize,
    pub ksub: usize,
    /// `m x ksub x dsub`, subspace-major.
    pub codebooks: Vec<f32>,
}

impl ProductQuantizer {
    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    /// Trains one codebook per subspace. `data` is row-major `n x dim`.
    pub fn train(data: &[f32], dim: usize, m: usize, params: &KMeansParams) -> Self {
        assert_eq!(dim % m, 0);
        let n = data.len() / dim;
        let dsub = dim / m;
        let ksub = params.k.min(n);
        let mut codebooks = Vec::with_capacity(m * ksub * dsub);
        for s in 0..m {
            let sub = subspace(data, dim, dsub, s);
            let km = kmeans(
                &sub,
                dsub,
                &KMeansParams {
                    k: ksub,
                    seed: params.seed.wrapping_add(s as u64),
                    ..*params
                },
            );
            codebooks.extend_from_slice(&km.centroids);
        }
        ProductQuantizer {
            dim,
            m,
            ksub,
            codebooks,
        }
    }

    fn codebook(&self, s: usize) -> &[f32] {
        let len = self.ksub * self.dsub();
        &self.codebooks[s * len..][..len]
    }

    /// Codes for every row of `data`, `m` bytes per row.
    pub fn encode(&self, data: &[f32]) -> Vec<u8> {
        let n = data.len() / self.dim;
        let mut codes = vec![0u8; n * self.m];
        for s in 0..self.m {
            let sub = subspace(data, self.dim, self.dsub(), s);
            for (i, (c, _)) in assign(&sub, self.dsub(), self.codebook(s)).into_iter().enumerate() {
                codes[i * self.m + s] = c as u8;
            }
        }
        codes
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let dsub = self.dsub();
        let mut out = Vec::with_capacity(self.dim);
        for (s, &c) in code.iter().enumerate() {
            out.extend_from_slice(&self.codebook(s)[c as usize * dsub..][..dsub]);
        }
        out
    }

    /// Squared distances from each subvector of `x` to every centroid, `m x ksub`.
    pub fn distance_table(&self, x: &[f32]) -> Vec<f32> {
        let dsub = self.dsub();
        let mut table = Vec::with_capacity(self.m * self.ksub);
        for s in 0..self.m {
            let q = &x[s * dsub..][..dsub];
            for c in self.codebook(s).chunks(dsub) {
                table.push(q.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum());
            }
        }
        table
    }

    /// Asymmetric distance of a code given a table from [`Self::distance_table`].
    pub fn adc(&self, table: &[f32], code: &[u8]) -> f32 {
        code.iter()
            .enumerate()
            .map(|(s, &c)| table[s * self.ksub + c as usize])
            .sum()
    }
}

fn subspace(data: &[f32], dim: usize, dsub: usize, s: usize) -> Vec<f32> {
    data.chunks(dim)
        .flat_map(|row| row[s * dsub..][..dsub].iter().copied())
        .collect()
}
