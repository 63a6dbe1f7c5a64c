//! Patch set posterior composites.
//!
//! Given a patch set {C}, the composite denoiser evaluates the patch
//! posterior mean on every crop and recombines the patches into one
//! image, dividing each pixel by its coverage count:
//!
//! D(z, t) = (sum_C C^T C)^{-1} sum_C C^T E[x_C | z_C, t]
//!
//! The normalizer is diagonal (crops are 0/1 selections), so the solve is
//! a per-pixel division. Patch sizes or mass fractions vary with the
//! noise level through knot schedules looked up in log-t distance.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::denoisers::empirical::{patch_posterior_mean_cached, CropNormCache};
use crate::denoisers::Denoiser;
use crate::diffusion::{derive_seed, sample_forward};
use crate::error::{PspcError, Result};
use crate::patch::{flex_crop_set, gather, scatter_add, square_crop_set, PatchSet};
use crate::store::csv::CsvTable;
use crate::store::dataset::ImageDataset;

/// A piecewise-constant map from noise level to a value, stored as knots
/// (t, value) with strictly decreasing positive t. Lookup picks the knot
/// nearest in |log t| distance, ties toward the earlier (larger-t) knot.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSchedule<V> {
    knots: Vec<(f64, V)>,
}

/// Patch size per noise level.
pub type SizeSchedule = KnotSchedule<usize>;
/// Mass fraction per noise level.
pub type LambdaSchedule = KnotSchedule<f64>;

impl<V: Copy> KnotSchedule<V> {
    pub fn new(knots: Vec<(f64, V)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(PspcError::ConfigError("schedule has no knots".into()));
        }
        for &(t, _) in &knots {
            if !(t > 0.0) || !t.is_finite() {
                return Err(PspcError::ConfigError(format!(
                    "knot time {t} is not a positive finite value"
                )));
            }
        }
        for pair in knots.windows(2) {
            if pair[1].0 >= pair[0].0 {
                return Err(PspcError::ConfigError(format!(
                    "knot times must be strictly decreasing, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        Ok(KnotSchedule { knots })
    }

    /// A schedule that answers `value` for every t.
    pub fn constant(value: V) -> Self {
        KnotSchedule {
            knots: vec![(1.0, value)],
        }
    }

    pub fn knots(&self) -> &[(f64, V)] {
        &self.knots
    }

    /// Value at the knot nearest to t in log space.
    pub fn lookup(&self, t: f64) -> Result<V> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(PspcError::DomainError(format!(
                "schedule lookup needs positive finite t, got {t}"
            )));
        }
        let log_t = t.ln();
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, &(kt, _)) in self.knots.iter().enumerate() {
            let dist = (log_t - kt.ln()).abs();
            if dist < best_dist {
                best_dist = dist;
                best = k;
            }
        }
        Ok(self.knots[best].1)
    }
}

/// Serializes a size schedule as a (t, s) table.
pub fn size_schedule_to_table(schedule: &SizeSchedule) -> Result<CsvTable> {
    let mut table = CsvTable::new(vec!["t", "s"])?;
    for &(t, s) in schedule.knots() {
        table.push_row(&[t, s as f64])?;
    }
    Ok(table)
}

/// Parses a size schedule from a (t, s) table.
pub fn size_schedule_from_table(table: &CsvTable) -> Result<SizeSchedule> {
    let ts = table.column("t")?;
    let ss = table.column("s")?;
    let knots = ts
        .into_iter()
        .zip(ss)
        .map(|(t, s)| {
            if s < 1.0 || s.fract() != 0.0 {
                Err(PspcError::FormatError(format!(
                    "patch size {s} is not a positive integer"
                )))
            } else {
                Ok((t, s as usize))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    KnotSchedule::new(knots)
}

/// Serializes a lambda schedule as a (t, lambda) table.
pub fn lambda_schedule_to_table(schedule: &LambdaSchedule) -> Result<CsvTable> {
    let mut table = CsvTable::new(vec!["t", "lambda"])?;
    for &(t, l) in schedule.knots() {
        table.push_row(&[t, l])?;
    }
    Ok(table)
}

/// Parses a lambda schedule from a (t, lambda) table.
pub fn lambda_schedule_from_table(table: &CsvTable) -> Result<LambdaSchedule> {
    let ts = table.column("t")?;
    let ls = table.column("lambda")?;
    let knots = ts
        .into_iter()
        .zip(ls)
        .map(|(t, l)| {
            if !(0.0..=1.0).contains(&l) {
                Err(PspcError::FormatError(format!(
                    "lambda {l} outside [0, 1]"
                )))
            } else {
                Ok((t, l))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    KnotSchedule::new(knots)
}

/// The composite denoiser over an explicit patch set. Patch posterior
/// means are computed per crop (in parallel), scattered back in crop
/// order, and normalized by pixel coverage.
pub fn pspc_denoise(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    set: &PatchSet,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    pspc_denoise_cached(dataset, z, t, set, top_k, &CropNormCache::new())
}

/// [`pspc_denoise`] with a caller-owned norm cache, for batched use.
pub fn pspc_denoise_cached(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    set: &PatchSet,
    top_k: Option<usize>,
    cache: &CropNormCache,
) -> Result<Vec<f64>> {
    let shape = dataset.shape();
    if set.h() != shape.h || set.w() != shape.w {
        return Err(PspcError::ShapeMismatch(format!(
            "patch set is {}x{}, dataset images are {}x{}",
            set.h(),
            set.w(),
            shape.h,
            shape.w
        )));
    }
    if z.len() != shape.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "z has {} values, images have {}",
            z.len(),
            shape.len()
        )));
    }
    if let Some((row, col)) = set.first_uncovered() {
        return Err(PspcError::UncoveredPixel { row, col });
    }

    let patches: Vec<Vec<f64>> = set
        .crops()
        .par_iter()
        .map(|crop| {
            let z_patch = gather(crop, shape, z)?;
            patch_posterior_mean_cached(dataset, crop, &z_patch, t, top_k, cache)
        })
        .collect::<Result<_>>()?;

    let mut accum = vec![0.0; shape.len()];
    for (crop, patch) in set.crops().iter().zip(&patches) {
        scatter_add(crop, shape, patch, &mut accum)?;
    }
    for p in 0..shape.pixels() {
        let cover = f64::from(set.coverage()[p]);
        for ch in 0..shape.c {
            accum[p * shape.c + ch] /= cover;
        }
    }
    Ok(accum)
}

/// Square composite: looks up the patch size for t and runs the composite
/// over all s-by-s crops.
pub fn pspc_square(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    schedule: &SizeSchedule,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    let s = schedule.lookup(t)?;
    let shape = dataset.shape();
    let set = square_crop_set(shape.h, shape.w, s)?;
    pspc_denoise(dataset, z, t, &set, top_k)
}

/// Flex composite: looks up the mass fraction for t, grows one greedy
/// crop per anchor over the supplied per-anchor heatmaps (H*W maps of
/// H*W entries, anchor-major), and runs the composite.
pub fn pspc_flex(
    dataset: &ImageDataset,
    z: &[f64],
    t: f64,
    maps: &[f64],
    schedule: &LambdaSchedule,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    let lambda = schedule.lookup(t)?;
    let shape = dataset.shape();
    let set = flex_crop_set(maps, shape.h, shape.w, lambda)?;
    pspc_denoise(dataset, z, t, &set, top_k)
}

/// What a tuning run minimizes per (t, candidate).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneObjective {
    /// Mean squared error of the composite against the reference output.
    Composite,
    /// Mean patch posterior error against reference patches, averaged
    /// with equal weight per crop.
    PatchMean,
}

/// Outcome of a schedule tuning run.
#[derive(Debug, Clone)]
pub struct TuneResult<V> {
    pub schedule: KnotSchedule<V>,
    /// Full error matrix, one row per (t, candidate).
    pub table: CsvTable,
}

/// Per-anchor heatmaps attached to one noise level, as consumed by
/// lambda tuning.
#[derive(Debug, Clone, Copy)]
pub struct MapsAtT<'a> {
    pub t: f64,
    pub maps: &'a [f64],
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

fn sort_grid_descending(t_grid: &[f64]) -> Result<Vec<f64>> {
    if t_grid.is_empty() {
        return Err(PspcError::ConfigError("tuning grid is empty".into()));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).expect("grid times are finite"));
    Ok(grid)
}

/// Tunes a patch size per grid point by drawing forward samples and
/// scoring every candidate size against the reference denoiser, either
/// through the full composite or through per-size patch errors. The
/// argmin wins; ties go to the smaller size.
pub fn tune_size_schedule(
    dataset: &ImageDataset,
    reference: &dyn Denoiser,
    t_grid: &[f64],
    sizes: &[usize],
    samples_per_t: usize,
    seed: u64,
    objective: TuneObjective,
) -> Result<TuneResult<usize>> {
    if sizes.is_empty() {
        return Err(PspcError::ConfigError("no candidate sizes".into()));
    }
    if samples_per_t == 0 {
        return Err(PspcError::ConfigError("samples_per_t must be positive".into()));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let grid = sort_grid_descending(t_grid)?;
    let shape = dataset.shape();

    let mut sets: HashMap<usize, Arc<PatchSet>> = HashMap::new();
    for &s in &sizes {
        sets.insert(s, Arc::new(square_crop_set(shape.h, shape.w, s)?));
    }
    let cache = CropNormCache::new();

    let mut table = CsvTable::new(vec!["t", "s", "mse"])?;
    let mut knots = Vec::with_capacity(grid.len());
    for (ti, &t) in grid.iter().enumerate() {
        let samples = sample_forward(dataset, t, samples_per_t, derive_seed(seed, ti as u64))?;
        let refs: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| reference.denoise(&s.z, t))
            .collect::<Result<_>>()?;

        let mut best = (sizes[0], f64::INFINITY);
        for &s in &sizes {
            let set = &sets[&s];
            let err = match objective {
                TuneObjective::Composite => {
                    let total: f64 = samples
                        .par_iter()
                        .zip(&refs)
                        .map(|(sample, r)| {
                            pspc_denoise_cached(dataset, &sample.z, t, set, None, &cache)
                                .map(|out| mse(&out, r))
                        })
                        .try_reduce(|| 0.0, |a, b| Ok(a + b))?;
                    total / samples.len() as f64
                }
                TuneObjective::PatchMean => {
                    let total: f64 = samples
                        .par_iter()
                        .zip(&refs)
                        .map(|(sample, r)| patch_error_one(dataset, set, &sample.z, r, t, &cache))
                        .try_reduce(|| 0.0, |a, b| Ok(a + b))?;
                    total / samples.len() as f64
                }
            };
            table.push_row(&[t, s as f64, err])?;
            if err < best.1 {
                best = (s, err);
            }
        }
        knots.push((t, best.0));
    }
    Ok(TuneResult {
        schedule: KnotSchedule::new(knots)?,
        table,
    })
}

/// Mean over crops (equal weight) of the per-value squared error between
/// the patch posterior mean and the reference output restricted to the
/// crop.
pub(crate) fn patch_error_one(
    dataset: &ImageDataset,
    set: &PatchSet,
    z: &[f64],
    reference_out: &[f64],
    t: f64,
    cache: &CropNormCache,
) -> Result<f64> {
    let shape = dataset.shape();
    let mut total = 0.0;
    for crop in set.crops() {
        let z_patch = gather(crop, shape, z)?;
        let est = patch_posterior_mean_cached(dataset, crop, &z_patch, t, None, cache)?;
        let want = gather(crop, shape, reference_out)?;
        total += mse(&est, &want);
    }
    Ok(total / set.crops().len() as f64)
}

/// Tunes the mass fraction per grid point against a reference denoiser.
/// The grid is the set of t values the heatmaps were computed at.
pub fn tune_lambda_schedule(
    dataset: &ImageDataset,
    reference: &dyn Denoiser,
    maps: &[MapsAtT<'_>],
    lambdas: &[f64],
    samples_per_t: usize,
    seed: u64,
) -> Result<TuneResult<f64>> {
    if lambdas.is_empty() {
        return Err(PspcError::ConfigError("no candidate lambdas".into()));
    }
    if samples_per_t == 0 {
        return Err(PspcError::ConfigError("samples_per_t must be positive".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| a.partial_cmp(b).expect("lambdas are finite"));
    lambdas.dedup();
    if maps.is_empty() {
        return Err(PspcError::ConfigError("no heatmaps supplied".into()));
    }
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&a, &b| {
        maps[b]
            .t
            .partial_cmp(&maps[a].t)
            .expect("map times are finite")
    });
    let shape = dataset.shape();
    let cache = CropNormCache::new();

    let mut table = CsvTable::new(vec!["t", "lambda", "mse"])?;
    let mut knots = Vec::with_capacity(order.len());
    for (ti, &mi) in order.iter().enumerate() {
        let MapsAtT { t, maps } = maps[mi];
        let samples = sample_forward(dataset, t, samples_per_t, derive_seed(seed, ti as u64))?;
        let refs: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| reference.denoise(&s.z, t))
            .collect::<Result<_>>()?;

        let mut best = (lambdas[0], f64::INFINITY);
        for &lambda in &lambdas {
            let set = flex_crop_set(maps, shape.h, shape.w, lambda)?;
            let total: f64 = samples
                .par_iter()
                .zip(&refs)
                .map(|(sample, r)| {
                    pspc_denoise_cached(dataset, &sample.z, t, &set, None, &cache)
                        .map(|out| mse(&out, r))
                })
                .try_reduce(|| 0.0, |a, b| Ok(a + b))?;
            let err = total / samples.len() as f64;
            table.push_row(&[t, lambda, err])?;
            if err < best.1 {
                best = (lambda, err);
            }
        }
        knots.push((t, best.0));
    }
    Ok(TuneResult {
        schedule: KnotSchedule::new(knots)?,
        table,
    })
}
