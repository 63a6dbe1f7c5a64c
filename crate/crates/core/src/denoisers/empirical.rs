//! Exact posterior computations over a finite dataset.
//!
//! Under the noising kernel p_t(z | x) = N(x, t^2 I) and a uniform prior
//! over the N dataset images, the posterior over images given z is a
//! softmax of -||z - x_i||^2 / (2 t^2). The posterior mean is the ideal
//! denoiser for the dataset distribution; restricted to a crop it becomes
//! the patch posterior mean.
//!
//! Numerics follow three rules everywhere:
//! * softmax goes through log space with max subtraction;
//! * squared distances use precomputed ||x||^2 and a dot product, except
//!   at very small t where the expanded form cancels and a direct
//!   subtraction loop is used instead;
//! * weighted reductions run in ascending dataset index order, so results
//!   do not depend on thread count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{PspcError, Result};
use crate::patch::CropSpec;
use crate::store::dataset::ImageDataset;

/// Below this noise level the expanded distance form
/// ||z||^2 - 2<z, x> + ||x||^2 loses too many digits to cancellation
/// (the softmax then amplifies the loss by 1/t^2), so distances fall back
/// to direct subtraction.
pub const DIRECT_DISTANCE_T: f64 = 1e-2;

/// Normalized posterior over dataset images (or a candidate subset) for
/// one noisy observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    t: f64,
    /// Ascending dataset indices when restricted to a subset; `None`
    /// means all images in order.
    indices: Option<Vec<usize>>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
}

impl PosteriorWeights {
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Normalized weights, aligned with [`PosteriorWeights::indices`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Log of the normalized weights.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Candidate subset (ascending), or `None` for the full dataset.
    pub fn indices(&self) -> Option<&[usize]> {
        self.indices.as_deref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Iterates (dataset index, weight) in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().enumerate().map(move |(k, &w)| {
            let idx = match &self.indices {
                Some(ids) => ids[k],
                None => k,
            };
            (idx, w)
        })
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(PspcError::DomainError(format!(
            "noise level must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

fn check_top_k(top_k: Option<usize>, n: usize) -> Result<()> {
    if let Some(k) = top_k {
        if k == 0 || k > n {
            return Err(PspcError::ConfigError(format!(
                "top_k must lie in [1, {n}], got {k}"
            )));
        }
    }
    Ok(())
}

/// Log-sum-exp with max subtraction.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Turns squared distances into normalized (log-)weights at level t.
fn softmax_from_sq_dists(sq_dists: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let scale = -0.5 / (t * t);
    let logits: Vec<f64> = sq_dists.iter().map(|&d| d * scale).collect();
    let lse = log_sum_exp(&logits);
    let log_weights: Vec<f64> = logits.iter().map(|&l| l - lse).collect();
    let weights: Vec<f64> = log_weights.iter().map(|&l| l.exp()).collect();
    (log_weights, weights)
}

/// Squared distance from z to one image, chosen per the crossover rule.
#[inline]
fn sq_dist_full(z: &[f64], z_norm: f64, img: &[f64], img_norm: f64, t: f64) -> f64 {
    if t < DIRECT_DISTANCE_T {
        z.iter()
            .zip(img)
            .map(|(&a, &b)| {
                let d = a - b;
                d * d
            })
            .sum()
    } else {
        let dot: f64 = z.iter().zip(img).map(|(&a, &b)| a * b).sum();
        (z_norm - 2.0 * dot + img_norm).max(0.0)
    }
}

/// Retains the `k` smallest distances, ties broken toward the smaller
/// dataset index, and returns the kept indices in ascending order.
fn select_top_k(sq_dists: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sq_dists.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        sq_dists[a]
            .partial_cmp(&sq_dists[b])
            .expect("distances are finite")
            .then(a.cmp(&b))
    });
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// Posterior weights over dataset images for observation z at level t.
/// With `top_k`, only the k nearest images (exact selection) keep weight;
/// the softmax is renormalized over them.
pub fn posterior_weights(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    top_k: Option<usize>,
) -> Result<PosteriorWeights> {
    check_t(t)?;
    check_top_k(top_k, dataset.n())?;
    let len = dataset.shape().len();
    if z.len() != len {
        return Err(PspcError::ShapeMismatch(format!(
            "z has {} values, images have {len}",
            z.len()
        )));
    }

    let z_norm: f64 = z.iter().map(|&v| v * v).sum();
    let sq_dists: Vec<f64> = (0..dataset.n())
        .map(|i| sq_dist_full(z, z_norm, dataset.image(i), dataset.norms()[i], t))
        .collect();

    let (indices, dists) = match top_k {
        Some(k) if k < dataset.n() => {
            let kept = select_top_k(&sq_dists, k);
            let d = kept.iter().map(|&i| sq_dists[i]).collect();
            (Some(kept), d)
        }
        _ => (None, sq_dists),
    };
    let (log_weights, weights) = softmax_from_sq_dists(&dists, t);
    Ok(PosteriorWeights {
        t,
        indices,
        log_weights,
        weights,
    })
}

/// Weighted average of dataset images, ascending index order.
fn weighted_mean(dataset: &ImageDataset, weights: &PosteriorWeights) -> Vec<f64> {
    let mut out = vec![0.0; dataset.shape().len()];
    for (idx, w) in weights.iter() {
        let img = dataset.image(idx);
        for (o, &x) in out.iter_mut().zip(img) {
            *o += w * x;
        }
    }
    out
}

/// The posterior mean E[x | z, t] over the dataset: the ideal denoiser
/// for the empirical data distribution.
pub fn optimal_denoise(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    let weights = posterior_weights(dataset, z, t, top_k)?;
    Ok(weighted_mean(dataset, &weights))
}

/// Memoized per-crop squared norms of every dataset image, keyed by the
/// crop's flat member indices. Shared across calls so batched composites
/// pay the gather cost once per distinct crop. First writer wins; all
/// writers compute identical content.
#[derive(Debug, Default)]
pub struct CropNormCache {
    map: Mutex<HashMap<Box<[usize]>, Arc<[f64]>>>,
}

impl CropNormCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Per-image squared norms over the given member value indices.
    pub fn norms(&self, dataset: &ImageDataset, flat: &[usize]) -> Arc<[f64]> {
        if let Some(hit) = self.map.lock().unwrap().get(flat) {
            return Arc::clone(hit);
        }
        let computed: Arc<[f64]> = (0..dataset.n())
            .map(|i| {
                let img = dataset.image(i);
                flat.iter()
                    .map(|&k| {
                        let v = img[k];
                        v * v
                    })
                    .sum()
            })
            .collect();
        let mut map = self.map.lock().unwrap();
        Arc::clone(map.entry(flat.into()).or_insert(computed))
    }
}

fn patch_sq_dists(
    dataset: &ImageDataset,
    flat: &[usize],
    z_patch: &[f64],
    t: f64,
    crop_norms: Option<&[f64]>,
) -> Vec<f64> {
    let n = dataset.n();
    let mut dists = Vec::with_capacity(n);
    match crop_norms {
        Some(norms) if t >= DIRECT_DISTANCE_T => {
            let z_norm: f64 = z_patch.iter().map(|&v| v * v).sum();
            for i in 0..n {
                let img = dataset.image(i);
                let dot: f64 = z_patch.iter().zip(flat).map(|(&zp, &k)| zp * img[k]).sum();
                dists.push((z_norm - 2.0 * dot + norms[i]).max(0.0));
            }
        }
        _ => {
            for i in 0..n {
                let img = dataset.image(i);
                let d: f64 = z_patch
                    .iter()
                    .zip(flat)
                    .map(|(&zp, &k)| {
                        let d = zp - img[k];
                        d * d
                    })
                    .sum();
                dists.push(d);
            }
        }
    }
    dists
}

fn patch_posterior_mean_impl(
    dataset: &ImageDataset,
    crop: &CropSpec,
    z_patch: &[f64],
    t: f64,
    top_k: Option<usize>,
    cache: Option<&CropNormCache>,
) -> Result<Vec<f64>> {
    check_t(t)?;
    check_top_k(top_k, dataset.n())?;
    let shape = dataset.shape();
    crop.check_bounds(shape.h, shape.w)?;
    if z_patch.len() != crop.n_values(shape) {
        return Err(PspcError::ShapeMismatch(format!(
            "patch observation has {} values, crop selects {}",
            z_patch.len(),
            crop.n_values(shape)
        )));
    }
    let flat = crop.flat_indices(shape);
    let cached_norms = if t >= DIRECT_DISTANCE_T {
        cache.map(|c| c.norms(dataset, &flat))
    } else {
        None
    };
    let mut dists = patch_sq_dists(dataset, &flat, z_patch, t, cached_norms.as_deref());

    let indices: Option<Vec<usize>> = match top_k {
        Some(k) if k < dataset.n() => {
            let kept = select_top_k(&dists, k);
            dists = kept.iter().map(|&i| dists[i]).collect();
            Some(kept)
        }
        _ => None,
    };
    let (_, weights) = softmax_from_sq_dists(&dists, t);

    let mut out = vec![0.0; flat.len()];
    match &indices {
        Some(ids) => {
            for (w, &i) in weights.iter().zip(ids) {
                let img = dataset.image(i);
                for (o, &k) in out.iter_mut().zip(&flat) {
                    *o += w * img[k];
                }
            }
        }
        None => {
            for (i, w) in weights.iter().enumerate() {
                let img = dataset.image(i);
                for (o, &k) in out.iter_mut().zip(&flat) {
                    *o += w * img[k];
                }
            }
        }
    }
    Ok(out)
}

/// The patch posterior mean E[x_C | z_C, t]: the softmax posterior
/// computed from crop-restricted distances, averaged over crop members.
/// Returns the estimate in crop member order (n_pixels * C values).
pub fn patch_posterior_mean(
    dataset: &ImageDataset,
    crop: &CropSpec,
    z_patch: &[f64],
    t: f64,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    patch_posterior_mean_impl(dataset, crop, z_patch, t, top_k, None)
}

/// [`patch_posterior_mean`] with a shared norm cache for batched use.
pub fn patch_posterior_mean_cached(
    dataset: &ImageDataset,
    crop: &CropSpec,
    z_patch: &[f64],
    t: f64,
    top_k: Option<usize>,
    cache: &CropNormCache,
) -> Result<Vec<f64>> {
    patch_posterior_mean_impl(dataset, crop, z_patch, t, top_k, Some(cache))
}

/// Posterior mean together with enough state to produce exact Jacobian
/// columns of the denoiser.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    t: f64,
    mean: Vec<f64>,
    weights: PosteriorWeights,
}

impl PosteriorMoments {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn weights(&self) -> &PosteriorWeights {
        &self.weights
    }

    /// Column j of d x_hat / d z. Differentiating the softmax posterior
    /// gives the scaled posterior covariance:
    /// J[:, j] = (sum_i w_i x_i[j] x_i - mean[j] mean) / t^2.
    pub fn jacobian_column(&self, dataset: &ImageDataset, j: usize) -> Result<Vec<f64>> {
        let len = dataset.shape().len();
        if j >= len {
            return Err(PspcError::ShapeMismatch(format!(
                "column {j} exceeds dimension {len}"
            )));
        }
        let inv_t2 = 1.0 / (self.t * self.t);
        let mut col = vec![0.0; len];
        for (idx, w) in self.weights.iter() {
            let img = dataset.image(idx);
            let xj = img[j];
            // w * (x_j * x_r) keeps the matrix symmetric to the bit:
            // the coordinate product commutes exactly
            for (o, &x) in col.iter_mut().zip(img) {
                *o += w * (xj * x);
            }
        }
        let mj = self.mean[j];
        for (o, &m) in col.iter_mut().zip(&self.mean) {
            *o = (*o - mj * m) * inv_t2;
        }
        Ok(col)
    }
}

/// Computes the posterior mean and retains the weights for Jacobian use.
pub fn posterior_moments(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    top_k: Option<usize>,
) -> Result<PosteriorMoments> {
    let weights = posterior_weights(dataset, z, t, top_k)?;
    let mean = weighted_mean(dataset, &weights);
    Ok(PosteriorMoments { t, mean, weights })
}
