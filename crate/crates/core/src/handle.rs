//! Ready-made denoisers.
//!
//! Each handle packages a denoising rule behind the [`Denoiser`] trait
//! so samplers and sweeps can treat them uniformly: the exact posterior
//! mean, fixed-size and scheduled patch composites, the Gaussian
//! baseline, a constant, and grid-aligned outputs loaded from a file.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::composite::{pspc_denoise_cached, LambdaSchedule, SizeSchedule};
use crate::denoisers::empirical::{optimal_denoise, posterior_moments, CropNormCache};
use crate::denoisers::gaussian::{fit_gaussian, gaussian_denoise, GaussianModel};
use crate::denoisers::{Denoiser, GridLoc};
use crate::error::{PspcError, Result};
use crate::patch::{flex_crop_set, square_crop_set, PatchSet};
use crate::sensitivity::SensitivityMap;
use crate::store::dataset::{ImageDataset, ImageShape};
use crate::store::tensor::{read_tensor_file, Tensor};

/// The exact posterior mean over a dataset, optionally restricted to
/// the k nearest images. Carries an analytic Jacobian.
pub struct OptimalDenoiser {
    dataset: Arc<ImageDataset>,
    top_k: Option<usize>,
}

impl OptimalDenoiser {
    pub fn new(dataset: Arc<ImageDataset>, top_k: Option<usize>) -> Self {
        OptimalDenoiser { dataset, top_k }
    }

    pub fn dataset(&self) -> &Arc<ImageDataset> {
        &self.dataset
    }
}

impl Denoiser for OptimalDenoiser {
    fn label(&self) -> String {
        match self.top_k {
            Some(k) => format!("optimal-k{k}"),
            None => "optimal".into(),
        }
    }

    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        optimal_denoise(&self.dataset, z, t, self.top_k)
    }

    fn jacobian_block(
        &self,
        z: &[f64],
        t: f64,
        cols: Range<usize>,
        _fd_step: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if cols.end > z.len() {
            return Err(PspcError::RangeError(format!(
                "column block {}..{} exceeds dimension {}",
                cols.start,
                cols.end,
                z.len()
            )));
        }
        let moments = posterior_moments(&self.dataset, z, t, self.top_k)?;
        cols.map(|j| moments.jacobian_column(&self.dataset, j))
            .collect()
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }
}

/// Patch composite with one fixed patch size at every noise level.
pub struct PatchDenoiser {
    dataset: Arc<ImageDataset>,
    s: usize,
    set: PatchSet,
    cache: CropNormCache,
    top_k: Option<usize>,
}

impl PatchDenoiser {
    pub fn new(dataset: Arc<ImageDataset>, s: usize, top_k: Option<usize>) -> Result<Self> {
        let shape = dataset.shape();
        let set = square_crop_set(shape.h, shape.w, s)?;
        Ok(PatchDenoiser {
            dataset,
            s,
            set,
            cache: CropNormCache::new(),
            top_k,
        })
    }
}

impl Denoiser for PatchDenoiser {
    fn label(&self) -> String {
        format!("patch-{}", self.s)
    }

    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        pspc_denoise_cached(&self.dataset, z, t, &self.set, self.top_k, &self.cache)
    }
}

/// Patch composite whose patch size follows a knot schedule in t.
pub struct PspcSquareDenoiser {
    dataset: Arc<ImageDataset>,
    schedule: SizeSchedule,
    sets: Mutex<HashMap<usize, Arc<PatchSet>>>,
    cache: CropNormCache,
    top_k: Option<usize>,
}

impl PspcSquareDenoiser {
    pub fn new(
        dataset: Arc<ImageDataset>,
        schedule: SizeSchedule,
        top_k: Option<usize>,
    ) -> Result<Self> {
        let shape = dataset.shape();
        let side = shape.h.min(shape.w);
        for &(_, s) in schedule.knots() {
            if s < 1 || s > side {
                return Err(PspcError::ConfigError(format!(
                    "scheduled patch size {s} outside [1, {side}]"
                )));
            }
        }
        Ok(PspcSquareDenoiser {
            dataset,
            schedule,
            sets: Mutex::new(HashMap::new()),
            cache: CropNormCache::new(),
            top_k,
        })
    }

    fn set_for(&self, s: usize) -> Result<Arc<PatchSet>> {
        if let Some(set) = self.sets.lock().expect("patch set cache poisoned").get(&s) {
            return Ok(Arc::clone(set));
        }
        let shape = self.dataset.shape();
        let set = Arc::new(square_crop_set(shape.h, shape.w, s)?);
        let mut guard = self.sets.lock().expect("patch set cache poisoned");
        Ok(Arc::clone(guard.entry(s).or_insert(set)))
    }
}

impl Denoiser for PspcSquareDenoiser {
    fn label(&self) -> String {
        "pspc-square".into()
    }

    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let s = self.schedule.lookup(t)?;
        let set = self.set_for(s)?;
        pspc_denoise_cached(&self.dataset, z, t, &set, self.top_k, &self.cache)
    }
}

/// Patch composite over greedy crops grown from per-anchor heatmaps,
/// with the mass fraction following a knot schedule in t. The heatmap
/// nearest to t in log space is used.
pub struct PspcFlexDenoiser {
    dataset: Arc<ImageDataset>,
    maps: Vec<SensitivityMap>,
    schedule: LambdaSchedule,
    sets: Mutex<HashMap<(usize, u64), Arc<PatchSet>>>,
    cache: CropNormCache,
    top_k: Option<usize>,
}

impl PspcFlexDenoiser {
    pub fn new(
        dataset: Arc<ImageDataset>,
        maps: Vec<SensitivityMap>,
        schedule: LambdaSchedule,
        top_k: Option<usize>,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(PspcError::ConfigError("no heatmaps supplied".into()));
        }
        let shape = dataset.shape();
        for m in &maps {
            if m.h() != shape.h || m.w() != shape.w {
                return Err(PspcError::ShapeMismatch(format!(
                    "heatmaps are {}x{}, dataset images are {}x{}",
                    m.h(),
                    m.w(),
                    shape.h,
                    shape.w
                )));
            }
            if !(m.t() > 0.0) {
                return Err(PspcError::ConfigError(
                    "heatmaps must carry positive noise levels".into(),
                ));
            }
        }
        Ok(PspcFlexDenoiser {
            dataset,
            maps,
            schedule,
            sets: Mutex::new(HashMap::new()),
            cache: CropNormCache::new(),
            top_k,
        })
    }

    fn nearest_map(&self, t: f64) -> usize {
        let log_t = t.ln();
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, m) in self.maps.iter().enumerate() {
            let dist = (log_t - m.t().ln()).abs();
            if dist < best_dist {
                best_dist = dist;
                best = k;
            }
        }
        best
    }

    fn set_for(&self, map_idx: usize, lambda: f64) -> Result<Arc<PatchSet>> {
        let key = (map_idx, lambda.to_bits());
        if let Some(set) = self
            .sets
            .lock()
            .expect("flex set cache poisoned")
            .get(&key)
        {
            return Ok(Arc::clone(set));
        }
        let shape = self.dataset.shape();
        let map = &self.maps[map_idx];
        let set = Arc::new(flex_crop_set(map.maps(), shape.h, shape.w, lambda)?);
        let mut guard = self.sets.lock().expect("flex set cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(set)))
    }
}

impl Denoiser for PspcFlexDenoiser {
    fn label(&self) -> String {
        "pspc-flex".into()
    }

    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(PspcError::DomainError(format!(
                "noise level must be positive and finite, got {t}"
            )));
        }
        let lambda = self.schedule.lookup(t)?;
        let set = self.set_for(self.nearest_map(t), lambda)?;
        pspc_denoise_cached(&self.dataset, z, t, &set, self.top_k, &self.cache)
    }
}

/// The posterior mean under a Gaussian fit of the dataset.
pub struct GaussianDenoiser {
    model: GaussianModel,
}

impl GaussianDenoiser {
    pub fn fit(dataset: &ImageDataset) -> Result<Self> {
        Ok(GaussianDenoiser {
            model: fit_gaussian(dataset)?,
        })
    }

    pub fn new(model: GaussianModel) -> Self {
        GaussianDenoiser { model }
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }
}

impl Denoiser for GaussianDenoiser {
    fn label(&self) -> String {
        "gaussian".into()
    }

    fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        gaussian_denoise(&self.model, z, t)
    }
}

/// Answers the same constant at every pixel and noise level.
pub struct ConstantDenoiser {
    c: f64,
}

impl ConstantDenoiser {
    pub fn new(c: f64) -> Self {
        ConstantDenoiser { c }
    }
}

impl Denoiser for ConstantDenoiser {
    fn label(&self) -> String {
        format!("constant-{}", self.c)
    }

    fn denoise(&self, z: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![self.c; z.len()])
    }
}

/// Precomputed outputs on an evaluation grid, loaded from a tensor of
/// shape (T, M, H, W, C). Only addressable by grid location; NaN cells
/// mark coverage gaps.
pub struct ExternalDenoiser {
    ts: Vec<f64>,
    m: usize,
    shape: ImageShape,
    values: Vec<f64>,
}

impl ExternalDenoiser {
    pub fn new(tensor: Tensor, ts: Vec<f64>) -> Result<Self> {
        let dims = tensor.dims().to_vec();
        if dims.len() != 5 {
            return Err(PspcError::FormatError(format!(
                "expected a rank 5 output tensor (T, M, H, W, C), got rank {}",
                dims.len()
            )));
        }
        if dims[0] != ts.len() {
            return Err(PspcError::ShapeMismatch(format!(
                "tensor holds {} levels but {} were given",
                dims[0],
                ts.len()
            )));
        }
        let shape = ImageShape::new(dims[2], dims[3], dims[4])?;
        Ok(ExternalDenoiser {
            ts,
            m: dims[1],
            shape,
            values: tensor.into_f64(),
        })
    }

    pub fn load(path: &Path, ts: Vec<f64>) -> Result<Self> {
        ExternalDenoiser::new(read_tensor_file(path)?, ts)
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }
}

impl Denoiser for ExternalDenoiser {
    fn label(&self) -> String {
        "external".into()
    }

    fn denoise(&self, _z: &[f64], t: f64) -> Result<Vec<f64>> {
        Err(PspcError::MissingData(format!(
            "external outputs are only defined on the evaluation grid, \
             free evaluation at t = {t} is not"
        )))
    }

    fn denoise_at(&self, _z: &[f64], t: f64, loc: GridLoc) -> Result<Vec<f64>> {
        if loc.t_index >= self.ts.len() || loc.sample_index >= self.m {
            return Err(PspcError::MissingData(format!(
                "no external output at t index {} sample {}",
                loc.t_index, loc.sample_index
            )));
        }
        let stored = self.ts[loc.t_index];
        if (stored - t).abs() > 1e-12 * stored.abs().max(1.0) {
            return Err(PspcError::ConfigError(format!(
                "grid mismatch: slot {} holds t = {stored}, asked for t = {t}",
                loc.t_index
            )));
        }
        let len = self.shape.len();
        let base = (loc.t_index * self.m + loc.sample_index) * len;
        let out = self.values[base..base + len].to_vec();
        if out.iter().any(|v| v.is_nan()) {
            return Err(PspcError::MissingData(format!(
                "external output at t = {t}, sample {} is marked missing",
                loc.sample_index
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::DEFAULT_FD_STEP;
    use crate::sensitivity::MapSource;

    fn dataset_2x2() -> Arc<ImageDataset> {
        let shape = ImageShape::new(2, 2, 1).unwrap();
        Arc::new(
            ImageDataset::from_values(
                "h",
                shape,
                vec![
                    0.5, -0.25, 0.125, 1.0, //
                    -0.5, 0.25, -0.125, -1.0, //
                    0.75, 0.0, -0.75, 0.5,
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn optimal_handle_matches_the_free_function() {
        let ds = dataset_2x2();
        let den = OptimalDenoiser::new(Arc::clone(&ds), None);
        let z = [0.3, -0.2, 0.05, 0.6];
        let got = den.denoise(&z, 0.8).unwrap();
        let want = optimal_denoise(&ds, &z, 0.8, None).unwrap();
        assert_eq!(got, want);
        assert_eq!(den.label(), "optimal");
        assert_eq!(OptimalDenoiser::new(ds, Some(2)).label(), "optimal-k2");
    }

    #[test]
    fn analytic_jacobian_agrees_with_finite_differences() {
        struct FdOnly {
            ds: Arc<ImageDataset>,
        }
        impl Denoiser for FdOnly {
            fn label(&self) -> String {
                "fd".into()
            }
            fn denoise(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
                optimal_denoise(&self.ds, z, t, None)
            }
        }
        let ds = dataset_2x2();
        let analytic = OptimalDenoiser::new(Arc::clone(&ds), None);
        assert!(analytic.has_analytic_jacobian());
        let fd = FdOnly { ds };
        assert!(!fd.has_analytic_jacobian());
        let z = [0.3, -0.2, 0.05, 0.6];
        let a = analytic.jacobian_block(&z, 1.0, 0..4, DEFAULT_FD_STEP).unwrap();
        let b = fd.jacobian_block(&z, 1.0, 0..4, DEFAULT_FD_STEP).unwrap();
        for (ca, cb) in a.iter().zip(&b) {
            for (x, y) in ca.iter().zip(cb) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(analytic.jacobian_block(&z, 1.0, 0..9, DEFAULT_FD_STEP).is_err());
    }

    #[test]
    fn full_size_patch_handle_equals_optimal() {
        let ds = dataset_2x2();
        let patch = PatchDenoiser::new(Arc::clone(&ds), 2, None).unwrap();
        let optimal = OptimalDenoiser::new(ds, None);
        let z = [0.9, -0.4, 0.0, 0.2];
        for t in [0.1, 1.0, 10.0] {
            let a = patch.denoise(&z, t).unwrap();
            let b = optimal.denoise(&z, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(patch.label(), "patch-2");
        assert!(PatchDenoiser::new(dataset_2x2(), 3, None).is_err());
    }

    #[test]
    fn scheduled_square_handle_switches_sizes() {
        let ds = dataset_2x2();
        let schedule = SizeSchedule::new(vec![(10.0, 2), (0.1, 1)]).unwrap();
        let den = PspcSquareDenoiser::new(Arc::clone(&ds), schedule, None).unwrap();
        let z = [0.9, -0.4, 0.0, 0.2];

        let big = den.denoise(&z, 10.0).unwrap();
        let optimal = OptimalDenoiser::new(Arc::clone(&ds), None)
            .denoise(&z, 10.0)
            .unwrap();
        for (x, y) in big.iter().zip(&optimal) {
            assert!((x - y).abs() < 1e-12);
        }

        let small = den.denoise(&z, 0.1).unwrap();
        let single = PatchDenoiser::new(Arc::clone(&ds), 1, None)
            .unwrap()
            .denoise(&z, 0.1)
            .unwrap();
        assert_eq!(small, single);

        let bad = SizeSchedule::new(vec![(1.0, 5)]).unwrap();
        assert!(PspcSquareDenoiser::new(ds, bad, None).is_err());
    }

    #[test]
    fn delta_maps_reduce_flex_to_single_pixel_squares() {
        let ds = dataset_2x2();
        let mut delta = vec![0.0; 16];
        for anchor in 0..4 {
            delta[anchor * 4 + anchor] = 1.0;
        }
        let map = SensitivityMap::new(1.0, 2, 2, delta, 0, MapSource::ExternalFile).unwrap();
        let flex = PspcFlexDenoiser::new(
            Arc::clone(&ds),
            vec![map],
            LambdaSchedule::constant(0.5),
            None,
        )
        .unwrap();
        let single = PatchDenoiser::new(Arc::clone(&ds), 1, None).unwrap();
        let z = [0.15, -0.6, 0.33, 0.0];
        for t in [0.1, 1.0, 10.0] {
            assert_eq!(flex.denoise(&z, t).unwrap(), single.denoise(&z, t).unwrap());
        }
        assert!(flex.denoise(&z, 0.0).is_err());

        let wrong = SensitivityMap::new(1.0, 3, 3, vec![0.5; 81], 0, MapSource::ExternalFile)
            .unwrap();
        assert!(PspcFlexDenoiser::new(
            ds,
            vec![wrong],
            LambdaSchedule::constant(0.5),
            None
        )
        .is_err());
    }

    #[test]
    fn gaussian_handle_returns_the_mean_at_huge_t() {
        let ds = dataset_2x2();
        let den = GaussianDenoiser::fit(&ds).unwrap();
        let out = den.denoise(&[0.9, -0.4, 0.0, 0.2], 1e8).unwrap();
        for (got, want) in out.iter().zip(ds.mean_image()) {
            assert!((got - want).abs() < 1e-10);
        }
        assert_eq!(den.label(), "gaussian");
    }

    #[test]
    fn constant_handle_ignores_input() {
        let den = ConstantDenoiser::new(0.25);
        assert_eq!(den.denoise(&[5.0, -3.0], 2.0).unwrap(), vec![0.25, 0.25]);
        assert_eq!(den.label(), "constant-0.25");
    }

    #[test]
    fn external_handle_reads_the_grid_and_reports_gaps() {
        // 2 levels, 2 samples, 1x1x1 images
        let values = vec![10.0, 11.0, 20.0, f64::NAN];
        let tensor = Tensor::from_f64(vec![2, 2, 1, 1, 1], values).unwrap();
        let den = ExternalDenoiser::new(tensor, vec![5.0, 0.5]).unwrap();

        let loc = |ti, si| GridLoc {
            t_index: ti,
            sample_index: si,
        };
        assert_eq!(den.denoise_at(&[0.0], 5.0, loc(0, 0)).unwrap(), vec![10.0]);
        assert_eq!(den.denoise_at(&[0.0], 5.0, loc(0, 1)).unwrap(), vec![11.0]);
        assert_eq!(den.denoise_at(&[0.0], 0.5, loc(1, 0)).unwrap(), vec![20.0]);

        assert!(matches!(
            den.denoise_at(&[0.0], 0.5, loc(1, 1)),
            Err(PspcError::MissingData(_))
        ));
        assert!(matches!(
            den.denoise_at(&[0.0], 5.0, loc(2, 0)),
            Err(PspcError::MissingData(_))
        ));
        assert!(matches!(
            den.denoise_at(&[0.0], 4.0, loc(0, 0)),
            Err(PspcError::ConfigError(_))
        ));
        assert!(matches!(
            den.denoise(&[0.0], 5.0),
            Err(PspcError::MissingData(_))
        ));

        let bad = Tensor::from_f64(vec![2, 2, 1], vec![0.0; 4]).unwrap();
        assert!(ExternalDenoiser::new(bad, vec![1.0, 0.5]).is_err());
    }
}
