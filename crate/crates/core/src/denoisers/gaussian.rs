//! Gaussian baseline denoiser.
//!
//! Fitting a single Gaussian N(mu, Sigma) to the dataset (empirical mean,
//! covariance divided by N) gives a closed-form posterior mean under the
//! noising kernel:
//!
//! x_hat = mu + Sigma (Sigma + t^2 I)^{-1} (z - mu)
//!
//! which in the covariance eigenbasis is coordinatewise shrinkage by
//! lambda_k / (lambda_k + t^2). Only eigenpairs with positive eigenvalue
//! are stored; null directions shrink to zero for every t, so dropping
//! them changes nothing.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{PspcError, Result};
use crate::store::dataset::ImageDataset;

/// Relative cutoff under the largest eigenvalue below which eigenpairs
/// are treated as null and dropped.
const EIGENVALUE_REL_CUTOFF: f64 = 1e-12;

/// First two moments of a dataset in eigendecomposed form.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    d: usize,
    mean: Vec<f64>,
    /// Positive eigenvalues of the covariance, descending.
    eigenvalues: Vec<f64>,
    /// Row k is the unit eigenvector for `eigenvalues[k]`; rank * d values.
    basis: Vec<f64>,
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Unit eigenvector k.
    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.basis[k * self.d..(k + 1) * self.d]
    }
}

/// Fits mean and covariance (normalized by N) and eigendecomposes the
/// covariance. For d <= N the d-by-d covariance is decomposed directly;
/// otherwise the N-by-N Gram matrix of centered images is decomposed and
/// its eigenvectors mapped into image space, which yields exactly the
/// nonzero spectrum at a fraction of the cost.
pub fn fit_gaussian(dataset: &ImageDataset) -> Result<GaussianModel> {
    let n = dataset.n();
    let d = dataset.shape().len();
    let mean = dataset.mean_image();
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| {
            dataset.image(i)
                .iter()
                .zip(&mean)
                .map(|(&x, &m)| x - m)
                .collect::<Vec<f64>>()
        })
        .collect();
    let inv_n = 1.0 / n as f64;

    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
    if d <= n {
        // covariance = Y^T Y / N, d x d
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = &centered[i * d..(i + 1) * d];
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] * inv_n;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let cutoff = lam_max * EIGENVALUE_REL_CUTOFF;
        for k in 0..d {
            let lam = eig.eigenvalues[k].max(0.0);
            if lam > cutoff && lam > 0.0 {
                pairs.push((lam, eig.eigenvectors.column(k).iter().cloned().collect()));
            }
        }
    } else {
        // Gram = Y Y^T / N, N x N; if G u = lam u then v = Y^T u / sqrt(N lam)
        // is a unit eigenvector of the covariance with the same eigenvalue.
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let dot: f64 = centered[i * d..(i + 1) * d]
                    .iter()
                    .zip(&centered[j * d..(j + 1) * d])
                    .map(|(&a, &b)| a * b)
                    .sum();
                let v = dot * inv_n;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram);
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let cutoff = lam_max * EIGENVALUE_REL_CUTOFF;
        for k in 0..n {
            let lam = eig.eigenvalues[k].max(0.0);
            if lam <= cutoff || lam <= 0.0 {
                continue;
            }
            let u = eig.eigenvectors.column(k);
            let scale = 1.0 / (n as f64 * lam).sqrt();
            let mut v = vec![0.0; d];
            for i in 0..n {
                let ui = u[i] * scale;
                let row = &centered[i * d..(i + 1) * d];
                for (o, &y) in v.iter_mut().zip(row) {
                    *o += ui * y;
                }
            }
            pairs.push((lam, v));
        }
    }

    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("eigenvalues are finite"));
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut basis = Vec::with_capacity(pairs.len() * d);
    for (_, v) in &pairs {
        basis.extend_from_slice(v);
    }
    Ok(GaussianModel {
        d,
        mean,
        eigenvalues,
        basis,
    })
}

/// The Gaussian posterior mean: coordinatewise shrinkage of z - mu by
/// lambda / (lambda + t^2) in the covariance eigenbasis.
pub fn gaussian_denoise(model: &GaussianModel, z: &[f64], t: f64) -> Result<Vec<f64>> {
    if z.len() != model.d {
        return Err(PspcError::ShapeMismatch(format!(
            "z has {} values, model has dimension {}",
            z.len(),
            model.d
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(PspcError::DomainError(format!(
            "noise level must be positive and finite, got {t}"
        )));
    }
    let t2 = t * t;
    let centered: Vec<f64> = z.iter().zip(&model.mean).map(|(&a, &m)| a - m).collect();
    let mut out = model.mean.clone();
    for (k, &lam) in model.eigenvalues.iter().enumerate() {
        let v = model.eigenvector(k);
        let coef: f64 = v.iter().zip(&centered).map(|(&a, &b)| a * b).sum();
        let shrink = lam / (lam + t2);
        let scaled = shrink * coef;
        for (o, &vi) in out.iter_mut().zip(v) {
            *o += scaled * vi;
        }
    }
    Ok(out)
}
