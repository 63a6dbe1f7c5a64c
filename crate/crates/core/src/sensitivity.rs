//! Denoiser sensitivity maps.
//!
//! A sensitivity map answers, per output pixel, how strongly the
//! denoiser output there depends on each input pixel. It is the mean
//! over forward samples of |dD(z, t)_out / dz_in|, read same-channel and
//! summed over channels, stored anchor-major: entry
//! maps[anchor_pixel * H * W + input_pixel].
//!
//! Maps double as heatmaps for growing flexible crops, either measured
//! from a denoiser or synthesized as isotropic blobs whose width follows
//! a power law in t.

use rayon::prelude::*;

use crate::denoisers::{Denoiser, DEFAULT_FD_STEP};
use crate::diffusion::sample_forward;
use crate::error::{PspcError, Result};
use crate::store::csv::CsvTable;
use crate::store::dataset::ImageDataset;
use crate::store::tensor::{read_tensor_file, write_tensor_file, Tensor};

use std::path::Path;

/// How a map was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    AnalyticEmpirical,
    FiniteDifference,
    ExternalFile,
    SyntheticBlob,
}

impl MapSource {
    pub fn label(&self) -> &'static str {
        match self {
            MapSource::AnalyticEmpirical => "analytic",
            MapSource::FiniteDifference => "fd",
            MapSource::ExternalFile => "external",
            MapSource::SyntheticBlob => "blob",
        }
    }
}

/// Per-anchor input sensitivities at one noise level.
#[derive(Debug, Clone)]
pub struct SensitivityMap {
    t: f64,
    h: usize,
    w: usize,
    maps: Vec<f64>,
    samples: usize,
    source: MapSource,
}

impl SensitivityMap {
    pub fn new(
        t: f64,
        h: usize,
        w: usize,
        maps: Vec<f64>,
        samples: usize,
        source: MapSource,
    ) -> Result<Self> {
        let hw = h
            .checked_mul(w)
            .and_then(|p| p.checked_mul(h * w))
            .ok_or_else(|| PspcError::ShapeMismatch("map size overflows".into()))?;
        if maps.len() != hw {
            return Err(PspcError::ShapeMismatch(format!(
                "expected {hw} map entries for {h}x{w}, got {}",
                maps.len()
            )));
        }
        if maps.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PspcError::RangeError(
                "sensitivity maps must be finite and nonnegative".into(),
            ));
        }
        Ok(SensitivityMap {
            t,
            h,
            w,
            maps,
            samples,
            source,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn source(&self) -> MapSource {
        self.source
    }

    /// All maps, anchor-major.
    pub fn maps(&self) -> &[f64] {
        &self.maps
    }

    /// The input-pixel map of one anchor (flat pixel index).
    pub fn map(&self, anchor: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.maps[anchor * hw..(anchor + 1) * hw]
    }

    /// The input-pixel map of the anchor at (row, col).
    pub fn map_at(&self, row: usize, col: usize) -> &[f64] {
        self.map(row * self.w + col)
    }
}

/// Knobs for map estimation.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityOptions {
    /// Step for the finite difference fallback.
    pub fd_step: f64,
    /// Jacobian columns requested per block.
    pub block_cols: usize,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions {
            fd_step: DEFAULT_FD_STEP,
            block_cols: 64,
        }
    }
}

/// Estimates the sensitivity map of a denoiser at level t by averaging
/// absolute Jacobian entries over forward samples. Column blocks are
/// evaluated in parallel per sample; accumulation order is fixed, so the
/// result does not depend on the thread count.
pub fn sensitivity_map(
    denoiser: &dyn Denoiser,
    dataset: &ImageDataset,
    t: f64,
    n_samples: usize,
    seed: u64,
    opts: SensitivityOptions,
) -> Result<SensitivityMap> {
    if n_samples == 0 {
        return Err(PspcError::ConfigError("n_samples must be positive".into()));
    }
    if opts.block_cols == 0 {
        return Err(PspcError::ConfigError("block_cols must be positive".into()));
    }
    let shape = dataset.shape();
    let (h, w, c) = (shape.h, shape.w, shape.c);
    let hw = h * w;
    let d = shape.len();
    let samples = sample_forward(dataset, t, n_samples, seed)?;

    let mut acc = vec![0.0f64; hw * hw];
    let block_starts: Vec<usize> = (0..d).step_by(opts.block_cols).collect();
    for sample in &samples {
        let blocks: Vec<Vec<Vec<f64>>> = block_starts
            .par_iter()
            .map(|&start| {
                let end = (start + opts.block_cols).min(d);
                denoiser.jacobian_block(&sample.z, t, start..end, opts.fd_step)
            })
            .collect::<Result<_>>()?;
        for (&start, block) in block_starts.iter().zip(&blocks) {
            for (offset, column) in block.iter().enumerate() {
                let col = start + offset;
                let in_pix = col / c;
                let in_ch = col % c;
                for out_pix in 0..hw {
                    acc[out_pix * hw + in_pix] += column[out_pix * c + in_ch].abs();
                }
            }
        }
    }
    let inv = 1.0 / n_samples as f64;
    for v in &mut acc {
        *v *= inv;
    }
    let source = if denoiser.has_analytic_jacobian() {
        MapSource::AnalyticEmpirical
    } else {
        MapSource::FiniteDifference
    };
    SensitivityMap::new(t, h, w, acc, n_samples, source)
}

/// Smallest odd side length s such that the s-by-s square centered on
/// the anchor (clipped to the image) holds at least `fraction` of the
/// map's total mass.
pub fn concentration_side_length(
    map: &[f64],
    h: usize,
    w: usize,
    anchor: (usize, usize),
    fraction: f64,
) -> Result<usize> {
    if map.len() != h * w {
        return Err(PspcError::ShapeMismatch(format!(
            "map has {} entries for a {h}x{w} image",
            map.len()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PspcError::ConfigError(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let (ar, ac) = anchor;
    if ar >= h || ac >= w {
        return Err(PspcError::RangeError(format!(
            "anchor ({ar}, {ac}) outside {h}x{w}"
        )));
    }
    if map.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PspcError::RangeError(
            "map entries must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return Err(PspcError::DegenerateHeatmap);
    }
    let target = fraction * total;
    let s_max = 2 * h.max(w) + 1;
    let mut s = 1;
    loop {
        let half = (s - 1) / 2;
        let r0 = ar.saturating_sub(half);
        let r1 = (ar + half).min(h - 1);
        let c0 = ac.saturating_sub(half);
        let c1 = (ac + half).min(w - 1);
        let mut mass = 0.0;
        for r in r0..=r1 {
            for c in c0..=c1 {
                mass += map[r * w + c];
            }
        }
        if mass >= target || s >= s_max {
            return Ok(s);
        }
        s += 2;
    }
}

/// Mean concentration side length over all anchors, one row per
/// requested mass fraction: columns (t, fraction, mean_side).
pub fn concentration_table(maps: &[SensitivityMap], fractions: &[f64]) -> Result<CsvTable> {
    let mut table = CsvTable::new(vec!["t", "fraction", "mean_side"])?;
    for map in maps {
        let (h, w) = (map.h(), map.w());
        for &fraction in fractions {
            let mut sum = 0usize;
            for anchor in 0..h * w {
                sum += concentration_side_length(
                    map.map(anchor),
                    h,
                    w,
                    (anchor / w, anchor % w),
                    fraction,
                )?;
            }
            let mean = sum as f64 / (h * w) as f64;
            table.push_row(&[map.t(), fraction, mean])?;
        }
    }
    Ok(table)
}

/// Power law width(t) = scale * t^exponent for synthetic blob maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobWidth {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for BlobWidth {
    fn default() -> Self {
        BlobWidth {
            scale: 1.5,
            exponent: 0.25,
        }
    }
}

impl BlobWidth {
    pub fn width(&self, t: f64) -> f64 {
        self.scale * t.powf(self.exponent)
    }
}

/// Isotropic Gaussian bump of the given width around every anchor:
/// map(anchor)(i, j) = exp(-((i - r)^2 + (j - c)^2) / (2 width^2)).
pub fn synthetic_blob_maps(h: usize, w: usize, width: f64, t: f64) -> Result<SensitivityMap> {
    if h == 0 || w == 0 {
        return Err(PspcError::ConfigError("empty image".into()));
    }
    if !(width > 0.0) || !width.is_finite() {
        return Err(PspcError::ConfigError(format!(
            "blob width must be positive and finite, got {width}"
        )));
    }
    let hw = h * w;
    let denom = 2.0 * width * width;
    let mut maps = vec![0.0f64; hw * hw];
    for ar in 0..h {
        for ac in 0..w {
            let base = (ar * w + ac) * hw;
            for i in 0..h {
                for j in 0..w {
                    let di = i as f64 - ar as f64;
                    let dj = j as f64 - ac as f64;
                    maps[base + i * w + j] = (-(di * di + dj * dj) / denom).exp();
                }
            }
        }
    }
    SensitivityMap::new(t, h, w, maps, 0, MapSource::SyntheticBlob)
}

/// Writes maps as one tensor: rank 4 (H, W, H, W) for a single level,
/// rank 5 (T, H, W, H, W) for a stack. All maps must share a shape.
pub fn save_maps(path: &Path, maps: &[SensitivityMap]) -> Result<()> {
    if maps.is_empty() {
        return Err(PspcError::ConfigError("no maps to save".into()));
    }
    let (h, w) = (maps[0].h(), maps[0].w());
    for m in maps {
        if m.h() != h || m.w() != w {
            return Err(PspcError::ShapeMismatch(
                "maps in one file must share a shape".into(),
            ));
        }
    }
    let mut values = Vec::with_capacity(maps.len() * h * w * h * w);
    for m in maps {
        values.extend_from_slice(m.maps());
    }
    let dims = if maps.len() == 1 {
        vec![h, w, h, w]
    } else {
        vec![maps.len(), h, w, h, w]
    };
    let tensor = Tensor::from_f64(dims, values)?;
    write_tensor_file(&tensor, path)
}

/// Reads maps saved by [`save_maps`] or produced elsewhere, attaching
/// the noise levels they belong to. A rank 4 file carries one map, a
/// rank 5 file carries ts.len() maps in order.
pub fn load_external_maps(path: &Path, ts: &[f64]) -> Result<Vec<SensitivityMap>> {
    if ts.is_empty() {
        return Err(PspcError::ConfigError("no noise levels given".into()));
    }
    let tensor = read_tensor_file(path)?;
    let dims = tensor.dims();
    let (count, h, w) = match dims.len() {
        4 => (1, dims[0], dims[1]),
        5 => (dims[0], dims[1], dims[2]),
        n => {
            return Err(PspcError::FormatError(format!(
                "expected a rank 4 or rank 5 map tensor, got rank {n}"
            )))
        }
    };
    let (h2, w2) = match dims.len() {
        4 => (dims[2], dims[3]),
        _ => (dims[3], dims[4]),
    };
    if h2 != h || w2 != w {
        return Err(PspcError::ShapeMismatch(format!(
            "map tensor dims {dims:?} are not (.., H, W, H, W)"
        )));
    }
    if count != ts.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "file holds {count} maps but {} noise levels were given",
            ts.len()
        )));
    }
    let values = tensor.into_f64();
    let hw2 = h * w * h * w;
    let mut out = Vec::with_capacity(count);
    for (k, &t) in ts.iter().enumerate() {
        let slice = values[k * hw2..(k + 1) * hw2].to_vec();
        out.push(SensitivityMap::new(
            t,
            h,
            w,
            slice,
            0,
            MapSource::ExternalFile,
        )?);
    }
    Ok(out)
}
