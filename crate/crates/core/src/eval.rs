//! Evaluation sets and sweep protocols.
//!
//! An evaluation set is a grid of noisy states: M states per noise
//! level, drawn from the forward process (with source indices kept),
//! collected along reverse trajectories, or loaded from a file. Sweeps
//! evaluate denoisers on the grid cell by cell and reduce in a fixed
//! order, so results do not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;

use crate::composite::patch_error_one;
use crate::denoisers::empirical::CropNormCache;
use crate::denoisers::{Denoiser, GridLoc};
use crate::diffusion::{derive_seed, sample_forward, sample_prior, TimeSchedule};
use crate::error::{PspcError, Result};
use crate::patch::square_crop_set;
use crate::sampler::{sample_batch, Solver};
use crate::store::csv::CsvTable;
use crate::store::dataset::{ImageDataset, ImageShape};
use crate::store::manifest::{RunManifest, MANIFEST_FILE};
use crate::store::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// Where an evaluation set's states came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSource {
    Forward,
    Reverse,
    External,
}

impl EvalSource {
    pub fn label(&self) -> &'static str {
        match self {
            EvalSource::Forward => "forward",
            EvalSource::Reverse => "reverse",
            EvalSource::External => "external",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(EvalSource::Forward),
            "reverse" => Ok(EvalSource::Reverse),
            "external" => Ok(EvalSource::External),
            other => Err(PspcError::FormatError(format!(
                "unknown evaluation source {other:?}"
            ))),
        }
    }
}

/// M noisy states per noise level, flat (T, M, H, W, C). Source image
/// indices are kept when known, -1 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    shape: ImageShape,
    ts: Vec<f64>,
    m: usize,
    zs: Vec<f64>,
    sources: Vec<i64>,
    kind: EvalSource,
}

impl EvalSet {
    pub fn new(
        shape: ImageShape,
        ts: Vec<f64>,
        m: usize,
        zs: Vec<f64>,
        sources: Vec<i64>,
        kind: EvalSource,
    ) -> Result<Self> {
        if ts.is_empty() || m == 0 {
            return Err(PspcError::ConfigError(
                "evaluation sets need at least one level and one sample".into(),
            ));
        }
        for &t in &ts {
            if !(t > 0.0) || !t.is_finite() {
                return Err(PspcError::RangeError(format!(
                    "noise levels must be positive and finite, got {t}"
                )));
            }
        }
        for (i, &a) in ts.iter().enumerate() {
            if ts[..i].contains(&a) {
                return Err(PspcError::ConfigError(format!(
                    "duplicate noise level {a} in the grid"
                )));
            }
        }
        if zs.len() != ts.len() * m * shape.len() {
            return Err(PspcError::ShapeMismatch(format!(
                "expected {} state values, got {}",
                ts.len() * m * shape.len(),
                zs.len()
            )));
        }
        if sources.len() != ts.len() * m {
            return Err(PspcError::ShapeMismatch(format!(
                "expected {} source entries, got {}",
                ts.len() * m,
                sources.len()
            )));
        }
        Ok(EvalSet {
            shape,
            ts,
            m,
            zs,
            sources,
            kind,
        })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> EvalSource {
        self.kind
    }

    /// The state at level index ti, sample index si.
    pub fn z(&self, ti: usize, si: usize) -> &[f64] {
        let len = self.shape.len();
        let base = (ti * self.m + si) * len;
        &self.zs[base..base + len]
    }

    /// The dataset index the state was drawn from, when known.
    pub fn source(&self, ti: usize, si: usize) -> Option<usize> {
        let v = self.sources[ti * self.m + si];
        usize::try_from(v).ok()
    }
}

/// Draws M forward samples at every grid level. Level i uses the seed
/// substream derive_seed(seed, i), so grids are reproducible and any
/// level can be rebuilt in isolation.
pub fn build_forward_evalset(
    dataset: &ImageDataset,
    t_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<EvalSet> {
    let shape = dataset.shape();
    let mut zs = Vec::with_capacity(t_grid.len() * m * shape.len());
    let mut sources = Vec::with_capacity(t_grid.len() * m);
    for (ti, &t) in t_grid.iter().enumerate() {
        let batch = sample_forward(dataset, t, m, derive_seed(seed, ti as u64))?;
        for sample in batch {
            zs.extend_from_slice(&sample.z);
            sources.push(sample.source as i64);
        }
    }
    EvalSet::new(shape, t_grid.to_vec(), m, zs, sources, EvalSource::Forward)
}

/// Integrates M Heun trajectories from seeded priors and records the
/// state at every positive schedule level. The grid levels are the
/// schedule's positive times.
pub fn build_reverse_evalset(
    denoiser: &dyn Denoiser,
    shape: ImageShape,
    schedule: &TimeSchedule,
    m: usize,
    seed: u64,
) -> Result<EvalSet> {
    if !schedule.has_terminal_zero() {
        return Err(PspcError::ConfigError(
            "reverse sets need a schedule that ends at 0".into(),
        ));
    }
    let ts = schedule.positive().to_vec();
    let priors = sample_prior(shape.len(), ts[0], m, seed)?;
    let trajectories = sample_batch(denoiser, schedule, &priors, Solver::Heun, true)?;
    let mut zs = Vec::with_capacity(ts.len() * m * shape.len());
    for ti in 0..ts.len() {
        for traj in &trajectories {
            zs.extend_from_slice(&traj.steps[ti].z);
        }
    }
    let sources = vec![-1i64; ts.len() * m];
    EvalSet::new(shape, ts, m, zs, sources, EvalSource::Reverse)
}

/// Wraps an external state dump of shape (T, M, H, W, C) as an
/// evaluation set.
pub fn evalset_from_tensor(tensor: Tensor, ts: Vec<f64>, kind: EvalSource) -> Result<EvalSet> {
    let dims = tensor.dims().to_vec();
    if dims.len() != 5 {
        return Err(PspcError::FormatError(format!(
            "expected a rank 5 state tensor (T, M, H, W, C), got rank {}",
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
    let m = dims[1];
    let sources = vec![-1i64; ts.len() * m];
    EvalSet::new(shape, ts, m, tensor.into_f64(), sources, kind)
}

/// Writes a set as a directory: z.pspc, sources.pspc, ts.csv and a
/// manifest.
pub fn save_evalset(dir: &Path, set: &EvalSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let shape = set.shape;
    let dims = vec![set.ts.len(), set.m, shape.h, shape.w, shape.c];
    write_tensor_file(&Tensor::from_f64(dims, set.zs.clone())?, &dir.join("z.pspc"))?;
    let sources: Vec<f64> = set.sources.iter().map(|&v| v as f64).collect();
    write_tensor_file(
        &Tensor::from_f64(vec![set.ts.len(), set.m], sources)?,
        &dir.join("sources.pspc"),
    )?;
    let mut ts = CsvTable::new(vec!["t"])?;
    for &t in &set.ts {
        ts.push_row(&[t])?;
    }
    ts.write(&dir.join("ts.csv"))?;
    let mut manifest = RunManifest::new();
    manifest.set("kind", "evalset")?;
    manifest.set("source", set.kind.label())?;
    manifest.set("m", set.m.to_string())?;
    manifest.set("n_levels", set.ts.len().to_string())?;
    manifest.write(&dir.join(MANIFEST_FILE))
}

/// Reads a directory written by [`save_evalset`].
pub fn load_evalset(dir: &Path) -> Result<EvalSet> {
    let z = read_tensor_file(&dir.join("z.pspc"))?;
    let dims = z.dims().to_vec();
    if dims.len() != 5 {
        return Err(PspcError::FormatError(format!(
            "expected a rank 5 state tensor, got rank {}",
            dims.len()
        )));
    }
    let shape = ImageShape::new(dims[2], dims[3], dims[4])?;
    let m = dims[1];
    let ts_table = CsvTable::read(&dir.join("ts.csv"))?;
    let ts = ts_table.column("t")?;
    let src = read_tensor_file(&dir.join("sources.pspc"))?;
    if src.dims() != [dims[0], m] {
        return Err(PspcError::ShapeMismatch(format!(
            "source tensor dims {:?} do not match states ({}, {})",
            src.dims(),
            dims[0],
            m
        )));
    }
    let sources: Vec<i64> = src
        .into_f64()
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || !v.is_finite() {
                Err(PspcError::FormatError(format!(
                    "source index {v} is not an integer"
                )))
            } else {
                Ok(v as i64)
            }
        })
        .collect::<Result<_>>()?;
    let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    let kind = match manifest.get("source") {
        Some(label) => EvalSource::parse(label)?,
        None => EvalSource::External,
    };
    EvalSet::new(shape, ts, m, z.into_f64(), sources, kind)
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

/// Mean squared difference between two denoisers on a set, one row per
/// level: columns (t, mse). The mean runs over samples and values.
pub fn mse_sweep(
    candidate: &dyn Denoiser,
    reference: &dyn Denoiser,
    set: &EvalSet,
) -> Result<CsvTable> {
    let mut table = CsvTable::new(vec!["t", "mse"])?;
    for (ti, &t) in set.ts().iter().enumerate() {
        let cell_errors: Vec<f64> = (0..set.m())
            .into_par_iter()
            .map(|si| {
                let loc = GridLoc {
                    t_index: ti,
                    sample_index: si,
                };
                let z = set.z(ti, si);
                let a = candidate.denoise_at(z, t, loc)?;
                let b = reference.denoise_at(z, t, loc)?;
                if a.len() != b.len() {
                    return Err(PspcError::ShapeMismatch(format!(
                        "outputs disagree in size: {} vs {}",
                        a.len(),
                        b.len()
                    )));
                }
                Ok(mse(&a, &b))
            })
            .collect::<Result<_>>()?;
        let mean = cell_errors.iter().sum::<f64>() / set.m() as f64;
        table.push_row(&[t, mean])?;
    }
    Ok(table)
}

/// Patch posterior error against a reference denoiser for every patch
/// size, one row per (level, size): columns (t, s, mse). Each crop
/// counts equally; the error per crop is the per-value mean against the
/// reference output restricted to that crop.
pub fn patch_error_sweep(
    dataset: &ImageDataset,
    sizes: &[usize],
    reference: &dyn Denoiser,
    set: &EvalSet,
) -> Result<CsvTable> {
    if sizes.is_empty() {
        return Err(PspcError::ConfigError("no patch sizes given".into()));
    }
    let shape = dataset.shape();
    if shape != set.shape() {
        return Err(PspcError::ShapeMismatch(format!(
            "dataset images are {}x{}x{}, set states are {}x{}x{}",
            shape.h,
            shape.w,
            shape.c,
            set.shape().h,
            set.shape().w,
            set.shape().c
        )));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut crop_sets = Vec::with_capacity(sizes.len());
    for &s in &sizes {
        crop_sets.push(square_crop_set(shape.h, shape.w, s)?);
    }
    let cache = CropNormCache::new();

    let mut table = CsvTable::new(vec!["t", "s", "mse"])?;
    for (ti, &t) in set.ts().iter().enumerate() {
        let refs: Vec<Vec<f64>> = (0..set.m())
            .into_par_iter()
            .map(|si| {
                let loc = GridLoc {
                    t_index: ti,
                    sample_index: si,
                };
                reference.denoise_at(set.z(ti, si), t, loc)
            })
            .collect::<Result<_>>()?;
        for (s, crop_set) in sizes.iter().zip(&crop_sets) {
            let errors: Vec<f64> = (0..set.m())
                .into_par_iter()
                .map(|si| patch_error_one(dataset, crop_set, set.z(ti, si), &refs[si], t, &cache))
                .collect::<Result<_>>()?;
            let mean = errors.iter().sum::<f64>() / set.m() as f64;
            table.push_row(&[t, *s as f64, mean])?;
        }
    }
    Ok(table)
}

/// Everything `compare_samples` measures.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    /// Denoiser labels, indexing the CSV columns below.
    pub labels: Vec<String>,
    /// Final-sample MSE per denoiser pair: columns (a, b, mse).
    pub pairwise: CsvTable,
    /// Closest training image per final sample, by max-abs distance:
    /// columns (handle, sample, nearest, max_abs_dist).
    pub nearest: CsvTable,
    /// Final states per denoiser, flat (M, H, W, C).
    pub finals: Vec<Vec<f64>>,
}

/// Runs Heun sampling from shared initial states under every denoiser
/// and compares the results: pairwise final MSE plus the nearest
/// training image per sample.
pub fn compare_samples(
    handles: &[&dyn Denoiser],
    dataset: &ImageDataset,
    schedule: &TimeSchedule,
    z_inits: &[Vec<f64>],
) -> Result<CompareOutcome> {
    if handles.is_empty() {
        return Err(PspcError::ConfigError("no denoisers to compare".into()));
    }
    if z_inits.is_empty() {
        return Err(PspcError::ConfigError("no initial states".into()));
    }
    let len = dataset.shape().len();
    for z0 in z_inits {
        if z0.len() != len {
            return Err(PspcError::ShapeMismatch(format!(
                "initial state has {} values, images have {len}",
                z0.len()
            )));
        }
    }

    let mut finals = Vec::with_capacity(handles.len());
    for handle in handles {
        let trajectories = sample_batch(*handle, schedule, z_inits, Solver::Heun, false)?;
        let mut flat = Vec::with_capacity(z_inits.len() * len);
        for traj in &trajectories {
            flat.extend_from_slice(&traj.final_z);
        }
        finals.push(flat);
    }

    let mut pairwise = CsvTable::new(vec!["a", "b", "mse"])?;
    for a in 0..handles.len() {
        for b in a + 1..handles.len() {
            pairwise.push_row(&[a as f64, b as f64, mse(&finals[a], &finals[b])])?;
        }
    }

    let mut nearest = CsvTable::new(vec!["handle", "sample", "nearest", "max_abs_dist"])?;
    for (hi, flat) in finals.iter().enumerate() {
        for si in 0..z_inits.len() {
            let sample = &flat[si * len..(si + 1) * len];
            let mut best = (0usize, f64::INFINITY);
            for i in 0..dataset.n() {
                let image = dataset.image(i);
                let dist = sample
                    .iter()
                    .zip(image)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if dist < best.1 {
                    best = (i, dist);
                }
            }
            nearest.push_row(&[hi as f64, si as f64, best.0 as f64, best.1])?;
        }
    }

    Ok(CompareOutcome {
        labels: handles.iter().map(|h| h.label()).collect(),
        pairwise,
        nearest,
        finals,
    })
}

/// Writes a comparison to a directory: both CSVs, one final-state
/// tensor per denoiser, and a manifest naming the denoisers.
pub fn save_compare(dir: &Path, outcome: &CompareOutcome, shape: ImageShape) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    outcome.pairwise.write(&dir.join("pairwise.csv"))?;
    outcome.nearest.write(&dir.join("nearest.csv"))?;
    let mut manifest = RunManifest::new();
    manifest.set("kind", "compare")?;
    for (hi, (label, flat)) in outcome.labels.iter().zip(&outcome.finals).enumerate() {
        let m = flat.len() / shape.len();
        let tensor = Tensor::from_f64(vec![m, shape.h, shape.w, shape.c], flat.clone())?;
        write_tensor_file(&tensor, &dir.join(format!("finals_{hi:03}.pspc")))?;
        manifest.set(&format!("handle_{hi:03}"), label)?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))
}
