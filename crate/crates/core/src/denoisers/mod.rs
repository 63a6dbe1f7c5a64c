//! Denoisers: training-free posterior estimators and the interface they
//! share with samplers and evaluation harnesses.
//!
//! The empirical denoisers treat the dataset itself as the data
//! distribution and evaluate exact posterior quantities under the
//! noising kernel N(x, t^2 I). The Gaussian baseline replaces the
//! dataset with its first two moments.

pub mod empirical;
pub mod gaussian;

use std::ops::Range;

use crate::error::{PspcError, Result};

pub use empirical::{
    optimal_denoise, patch_posterior_mean, patch_posterior_mean_cached, posterior_moments,
    posterior_weights, CropNormCache, PosteriorMoments, PosteriorWeights, DIRECT_DISTANCE_T,
};
pub use gaussian::{fit_gaussian, gaussian_denoise, GaussianModel};

/// Default step for finite-difference Jacobians.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Position of an input inside an evaluation grid: which time and which
/// sample. File-backed denoisers are only defined at grid positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLoc {
    pub t_index: usize,
    pub sample_index: usize,
}

/// A denoiser x_hat(z, t), the common currency of samplers, sensitivity
/// maps, and sweeps.
pub trait Denoiser: Sync {
    /// Short identifier for manifests and logs.
    fn label(&self) -> String;

    /// The posterior mean estimate for z at noise level t.
    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>>;

    /// Grid-aware variant. Function-backed denoisers ignore the position;
    /// file-backed dumps are defined only here.
    fn denoise_at(&self, z: &[f64], t: f64, _loc: GridLoc) -> Result<Vec<f64>> {
        self.denoise(z, t)
    }

    /// Columns `cols` of the Jacobian d x_hat / d z at (z, t), each of
    /// length z.len(). The default uses central differences of `denoise`;
    /// denoisers with a closed-form Jacobian override this.
    fn jacobian_block(
        &self,
        z: &[f64],
        t: f64,
        cols: Range<usize>,
        fd_step: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if cols.end > z.len() {
            return Err(PspcError::ShapeMismatch(format!(
                "column range {cols:?} exceeds dimension {}",
                z.len()
            )));
        }
        if !(fd_step > 0.0) {
            return Err(PspcError::ConfigError(format!(
                "finite-difference step must be positive, got {fd_step}"
            )));
        }
        let mut out = Vec::with_capacity(cols.len());
        let mut probe = z.to_vec();
        for j in cols {
            probe[j] = z[j] + fd_step;
            let plus = self.denoise(&probe, t)?;
            probe[j] = z[j] - fd_step;
            let minus = self.denoise(&probe, t)?;
            probe[j] = z[j];
            out.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(&p, &m)| (p - m) / (2.0 * fd_step))
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Whether `jacobian_block` is exact rather than finite-differenced.
    fn has_analytic_jacobian(&self) -> bool {
        false
    }
}
