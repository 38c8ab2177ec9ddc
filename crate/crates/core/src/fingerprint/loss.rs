use super::FingerprintError;

/// Contrastive loss value with gradients w.r.t. both embedding batches.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// `n x dim`, row-major, gradient w.r.t. `phi`.
    pub grad_phi: Vec<f64>,
    pub grad_phi_hat: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum over the batch of
/// `-log(d(phi_i, phi_hat_i) / (d(phi_i, phi_hat_i) + sum_{j != i} d(phi_i, phi_j)))`
/// with `d(a, b) = exp(cos(a, b) / tau)`.
///
/// Rows need not be normalised; the cosine takes care of it and the gradients
/// account for it.
pub fn contrastive_loss(
    phi: &[f64],
    phi_hat: &[f64],
    dim: usize,
    tau: f64,
) -> Result<ContrastiveOutput, FingerprintError> {
    let n = phi.len() / dim;
    if n < 2 {
        return Err(FingerprintError::DegenerateBatch(n));
    }
    assert_eq!(phi.len(), n * dim);
    assert_eq!(phi_hat.len(), n * dim);
    let row = |m: &'_ [f64], i: usize| -> Vec<f64> { m[i * dim..(i + 1) * dim].to_vec() };
    let norms: Vec<f64> = (0..n).map(|i| norm(&row(phi, i))).collect();
    let hat_norms: Vec<f64> = (0..n).map(|i| norm(&row(phi_hat, i))).collect();
    let cos = |i: usize, j: usize| dot(&phi[i * dim..][..dim], &phi[j * dim..][..dim]) / (norms[i] * norms[j]);
    let pos_cos: Vec<f64> = (0..n)
        .map(|i| dot(&phi[i * dim..][..dim], &phi_hat[i * dim..][..dim]) / (norms[i] * hat_norms[i]))
        .collect();

    // Coefficients of dL/dcos for every pair that appears in the loss.
    let mut coef_pos = vec![0.0; n];
    let mut coef_neg = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| if j == i { pos_cos[i] / tau } else { cos(i, j) / tau })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        loss += -(logits[i] - max) + z.ln();
        for j in 0..n {
            let p = (logits[j] - max).exp() / z;
            if j == i {
                coef_pos[i] = (p - 1.0) / tau;
            } else {
                coef_neg[i * n + j] += p / tau;
            }
        }
    }
    if !loss.is_finite() {
        return Err(FingerprintError::DivergedTraining("non-finite contrastive loss".into()));
    }

    let mut grad_phi = vec![0.0; n * dim];
    let mut grad_phi_hat = vec![0.0; n * dim];
    // d cos(a, b) / da = (b/|b| - cos * a/|a|) / |a|
    let accumulate = |target: &mut [f64], a: &[f64], na: f64, b: &[f64], nb: f64, c: f64, coef: f64| {
        for k in 0..dim {
            target[k] += coef * (b[k] / nb - c * a[k] / na) / na;
        }
    };
    for i in 0..n {
        let (pi, hi) = (&phi[i * dim..][..dim], &phi_hat[i * dim..][..dim]);
        let c = pos_cos[i];
        accumulate(
            &mut grad_phi[i * dim..][..dim],
            pi,
            norms[i],
            hi,
            hat_norms[i],
            c,
            coef_pos[i],
        );
        accumulate(
            &mut grad_phi_hat[i * dim..][..dim],
            hi,
            hat_norms[i],
            pi,
            norms[i],
            c,
            coef_pos[i],
        );
        for j in 0..n {
            if j == i {
                continue;
            }
            // cos(i, j) appears in term i and, symmetrically, in term j.
            let coef = coef_neg[i * n + j] + coef_neg[j * n + i];
            let pj = &phi[j * dim..][..dim];
            accumulate(
                &mut grad_phi[i * dim..][..dim],
                pi,
                norms[i],
                pj,
                norms[j],
                cos(i, j),
                coef,
            );
        }
    }
    Ok(ContrastiveOutput {
        loss,
        grad_phi,
        grad_phi_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_pair_closed_form() {
        let dim = 256;
        let mut phi = vec![0.0; 2 * dim];
        phi[0] = 1.0;
        phi[dim + 1] = 1.0;
        let out = contrastive_loss(&phi, &phi, dim, 1.0).unwrap();
        let e = std::f64::consts::E;
        let per_term = -(e / (e + 1.0)).ln();
        assert!((out.loss - 2.0 * per_term).abs() < 1e-12);
        assert!((per_term - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn single_row_is_degenerate() {
        assert!(matches!(
            contrastive_loss(&[1.0, 0.0], &[1.0, 0.0], 2, 0.1),
            Err(FingerprintError::DegenerateBatch(1))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, dim, h) = (4, 16, 1e-5);
        for tau in [0.1, 1.0] {
            let phi: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hat: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = contrastive_loss(&phi, &hat, dim, tau).unwrap();
            for idx in 0..n * dim {
                let mut up = phi.clone();
                let mut dn = phi.clone();
                up[idx] += h;
                dn[idx] -= h;
                let fd = (contrastive_loss(&up, &hat, dim, tau).unwrap().loss
                    - contrastive_loss(&dn, &hat, dim, tau).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - out.grad_phi[idx]).abs() <= 1e-6 + 1e-4 * fd.abs());
                let mut up = hat.clone();
                let mut dn = hat.clone();
                up[idx] += h;
                dn[idx] -= h;
                let fd = (contrastive_loss(&phi, &up, dim, tau).unwrap().loss
                    - contrastive_loss(&phi, &dn, dim, tau).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - out.grad_phi_hat[idx]).abs() <= 1e-6 + 1e-4 * fd.abs());
            }
        }
    }

    #[test]
    fn invariant_to_batch_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, dim) = (5, 8);
        let phi: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hat: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let perm = [3, 0, 4, 1, 2];
        let permute =
            |m: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&i| m[i * dim..(i + 1) * dim].to_vec()).collect() };
        let a = contrastive_loss(&phi, &hat, dim, 0.1).unwrap().loss;
        let b = contrastive_loss(&permute(&phi), &permute(&hat), dim, 0.1).unwrap().loss;
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        assert!(a >= 0.0);
    }
}
