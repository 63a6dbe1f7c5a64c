//! Crop geometry: pixel subsets, gather/scatter, and crop set builders.
//!
//! A crop is an ordered set of pixel coordinates; all channels of a member
//! pixel move together, so a crop of n pixels selects n*C values from a
//! channel-last image. Two families of crop sets exist:
//!
//! * square sets: every s-by-s window fully inside the image, one crop per
//!   top-left corner, no padding;
//! * flex sets: one greedy crop per anchor pixel, grown over a heatmap in
//!   descending-value order until a fraction lambda of the total mass is
//!   captured.

use rayon::prelude::*;
use std::path::Path;

use crate::error::{PspcError, Result};
use crate::store::dataset::ImageShape;
use crate::store::manifest::RunManifest;
use crate::store::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// An ordered, duplicate-free set of member pixels plus an anchor.
///
/// Members are kept in canonical row-major order regardless of how the
/// crop was grown; the anchor names the pixel the crop belongs to and is
/// not required to be a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropSpec {
    pixels: Vec<(usize, usize)>,
    anchor: (usize, usize),
}

impl CropSpec {
    /// Builds a crop, sorting members into row-major order. Duplicate
    /// members are rejected.
    pub fn new(mut pixels: Vec<(usize, usize)>, anchor: (usize, usize)) -> Result<Self> {
        if pixels.is_empty() {
            return Err(PspcError::ConfigError("crop has no member pixels".into()));
        }
        pixels.sort_unstable();
        for pair in pixels.windows(2) {
            if pair[0] == pair[1] {
                return Err(PspcError::ConfigError(format!(
                    "duplicate member pixel ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        Ok(CropSpec { pixels, anchor })
    }

    /// Member pixels in row-major order.
    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn anchor(&self) -> (usize, usize) {
        self.anchor
    }

    /// Member pixel count (channels not included).
    pub fn n_pixels(&self) -> usize {
        self.pixels.len()
    }

    /// Values selected from an image of the given shape.
    pub fn n_values(&self, shape: ImageShape) -> usize {
        self.pixels.len() * shape.c
    }

    /// Checks that all members lie inside an H-by-W grid.
    pub fn check_bounds(&self, h: usize, w: usize) -> Result<()> {
        for &(r, c) in &self.pixels {
            if r >= h || c >= w {
                return Err(PspcError::ShapeMismatch(format!(
                    "member pixel ({r}, {c}) outside {h}x{w} image"
                )));
            }
        }
        Ok(())
    }

    /// Flat value indices of the members (all channels, member order).
    pub fn flat_indices(&self, shape: ImageShape) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_values(shape));
        for &(r, c) in &self.pixels {
            let base = (r * shape.w + c) * shape.c;
            for ch in 0..shape.c {
                out.push(base + ch);
            }
        }
        out
    }
}

/// Copies the crop members out of an image: the matrix-free form of C*x.
pub fn gather(crop: &CropSpec, shape: ImageShape, image: &[f64]) -> Result<Vec<f64>> {
    if image.len() != shape.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "image has {} values, shape implies {}",
            image.len(),
            shape.len()
        )));
    }
    crop.check_bounds(shape.h, shape.w)?;
    let mut out = Vec::with_capacity(crop.n_values(shape));
    for &(r, c) in &crop.pixels {
        let base = (r * shape.w + c) * shape.c;
        out.extend_from_slice(&image[base..base + shape.c]);
    }
    Ok(out)
}

/// Adds patch values back onto an accumulator: the matrix-free C^T * y.
pub fn scatter_add(
    crop: &CropSpec,
    shape: ImageShape,
    patch: &[f64],
    accum: &mut [f64],
) -> Result<()> {
    if accum.len() != shape.len() {
        return Err(PspcError::ShapeMismatch(format!(
            "accumulator has {} values, shape implies {}",
            accum.len(),
            shape.len()
        )));
    }
    if patch.len() != crop.n_values(shape) {
        return Err(PspcError::ShapeMismatch(format!(
            "patch has {} values, crop selects {}",
            patch.len(),
            crop.n_values(shape)
        )));
    }
    crop.check_bounds(shape.h, shape.w)?;
    let mut k = 0;
    for &(r, c) in &crop.pixels {
        let base = (r * shape.w + c) * shape.c;
        for ch in 0..shape.c {
            accum[base + ch] += patch[k];
            k += 1;
        }
    }
    Ok(())
}

/// A collection of crops over one H-by-W grid, with per-pixel coverage
/// counts (how many crops contain each pixel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    h: usize,
    w: usize,
    crops: Vec<CropSpec>,
    coverage: Vec<u32>,
}

impl PatchSet {
    pub fn new(h: usize, w: usize, crops: Vec<CropSpec>) -> Result<Self> {
        if crops.is_empty() {
            return Err(PspcError::ConfigError("patch set has no crops".into()));
        }
        let mut coverage = vec![0u32; h * w];
        for crop in &crops {
            crop.check_bounds(h, w)?;
            for &(r, c) in crop.pixels() {
                coverage[r * w + c] += 1;
            }
        }
        Ok(PatchSet {
            h,
            w,
            crops,
            coverage,
        })
    }

    /// The trivial set: one crop containing every pixel.
    pub fn full_image(h: usize, w: usize) -> Result<Self> {
        let mut pixels = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                pixels.push((r, c));
            }
        }
        Self::new(h, w, vec![CropSpec::new(pixels, (0, 0))?])
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn crops(&self) -> &[CropSpec] {
        &self.crops
    }

    /// Coverage count per pixel, row-major H*W.
    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn min_coverage(&self) -> u32 {
        self.coverage.iter().copied().min().unwrap_or(0)
    }

    /// First uncovered pixel, if any.
    pub fn first_uncovered(&self) -> Option<(usize, usize)> {
        self.coverage
            .iter()
            .position(|&c| c == 0)
            .map(|p| (p / self.w, p % self.w))
    }
}

/// Builds the set of all s-by-s windows fully inside an H-by-W image.
/// Crops are ordered row-major by top-left corner; the corner is the
/// anchor.
pub fn square_crop_set(h: usize, w: usize, s: usize) -> Result<PatchSet> {
    if s < 1 || s > h.min(w) {
        return Err(PspcError::ConfigError(format!(
            "square size {s} not in [1, {}] for a {h}x{w} image",
            h.min(w)
        )));
    }
    let mut crops = Vec::with_capacity((h - s + 1) * (w - s + 1));
    for r0 in 0..=h - s {
        for c0 in 0..=w - s {
            let mut pixels = Vec::with_capacity(s * s);
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    pixels.push((r, c));
                }
            }
            crops.push(CropSpec::new(pixels, (r0, c0))?);
        }
    }
    PatchSet::new(h, w, crops)
}

fn validate_heatmap(map: &[f64], h: usize, w: usize) -> Result<()> {
    if map.len() != h * w {
        return Err(PspcError::ShapeMismatch(format!(
            "heatmap has {} entries, grid is {h}x{w}",
            map.len()
        )));
    }
    for (p, &v) in map.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(PspcError::RangeError(format!(
                "heatmap value {v} at pixel ({}, {}) is not a finite nonnegative number",
                p / w,
                p % w
            )));
        }
    }
    Ok(())
}

/// Grows one greedy crop over a nonnegative heatmap.
///
/// Pixels are taken in descending-value order (ties row-major) until the
/// selection captures at least lambda of the total map mass. Zero-valued
/// pixels are never selected, so lambda = 1 yields exactly the positive
/// support and lambda = 0 the single largest pixel. The anchor is recorded
/// but not forced into the selection.
pub fn flex_crop(
    map: &[f64],
    h: usize,
    w: usize,
    anchor: (usize, usize),
    lambda: f64,
) -> Result<CropSpec> {
    validate_heatmap(map, h, w)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PspcError::ConfigError(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if anchor.0 >= h || anchor.1 >= w {
        return Err(PspcError::ShapeMismatch(format!(
            "anchor ({}, {}) outside {h}x{w} image",
            anchor.0, anchor.1
        )));
    }
    // Total mass is summed in canonical row-major order so the target is
    // independent of the selection order.
    let total: f64 = map.iter().sum();
    if total <= 0.0 {
        return Err(PspcError::DegenerateHeatmap);
    }

    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| {
        map[b]
            .partial_cmp(&map[a])
            .expect("heatmap values are finite")
            .then(a.cmp(&b))
    });

    let target = lambda * total;
    let mut pixels = Vec::new();
    let mut cum = 0.0;
    for &p in &order {
        let v = map[p];
        if v <= 0.0 {
            break;
        }
        pixels.push((p / w, p % w));
        cum += v;
        if lambda < 1.0 && cum >= target {
            break;
        }
    }
    CropSpec::new(pixels, anchor)
}

/// Builds one greedy crop per anchor pixel from per-anchor heatmaps.
///
/// `maps` holds H*W heatmaps of H*W entries each, row-major in both the
/// anchor and the map: entry `[anchor_pix * H*W + pix]`. Every pixel must
/// end up covered by at least one crop.
pub fn flex_crop_set(maps: &[f64], h: usize, w: usize, lambda: f64) -> Result<PatchSet> {
    let hw = h * w;
    if maps.len() != hw * hw {
        return Err(PspcError::ShapeMismatch(format!(
            "need {hw} heatmaps of {hw} entries ({} values), got {}",
            hw * hw,
            maps.len()
        )));
    }
    let crops: Vec<CropSpec> = (0..hw)
        .into_par_iter()
        .map(|a| flex_crop(&maps[a * hw..(a + 1) * hw], h, w, (a / w, a % w), lambda))
        .collect::<Result<_>>()?;
    let set = PatchSet::new(h, w, crops)?;
    if let Some((r, c)) = set.first_uncovered() {
        return Err(PspcError::UncoveredPixel { row: r, col: c });
    }
    Ok(set)
}

/// Writes a patch set as `{base}.pspc` (rows of crop index, row, col) plus
/// a `{base}.txt` sidecar holding grid dims, per-crop anchors, and any
/// caller annotations (patch size, lambda, t).
pub fn save_patch_set(set: &PatchSet, base: &Path, annotations: &RunManifest) -> Result<()> {
    let mut rows = Vec::new();
    for (i, crop) in set.crops().iter().enumerate() {
        for &(r, c) in crop.pixels() {
            rows.extend_from_slice(&[i as f64, r as f64, c as f64]);
        }
    }
    let n_rows = rows.len() / 3;
    write_tensor_file(
        &Tensor::from_f64(vec![n_rows, 3], rows)?,
        &base.with_extension("pspc"),
    )?;
    let mut side = annotations.clone();
    side.set("h", set.h())?;
    side.set("w", set.w())?;
    side.set("n_crops", set.crops().len())?;
    for (i, crop) in set.crops().iter().enumerate() {
        let (r, c) = crop.anchor();
        side.set(&format!("anchor_{i:06}"), format!("{r},{c}"))?;
    }
    side.write(&base.with_extension("txt"))?;
    Ok(())
}

/// Reads back a patch set written by [`save_patch_set`].
pub fn load_patch_set(base: &Path) -> Result<(PatchSet, RunManifest)> {
    let side = RunManifest::read(&base.with_extension("txt"))?;
    let parse = |key: &str| -> Result<usize> {
        side.get(key)
            .ok_or_else(|| PspcError::MissingData(format!("sidecar lacks {key}")))?
            .parse()
            .map_err(|_| PspcError::FormatError(format!("sidecar {key} is not an integer")))
    };
    let (h, w, n_crops) = (parse("h")?, parse("w")?, parse("n_crops")?);
    let tensor = read_tensor_file(&base.with_extension("pspc"))?;
    if tensor.dims().len() != 2 || tensor.dims()[1] != 3 {
        return Err(PspcError::ShapeMismatch(format!(
            "patch set tensor must be (K, 3), got {:?}",
            tensor.dims()
        )));
    }
    let values = tensor.into_f64();
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_crops];
    for row in values.chunks_exact(3) {
        let idx = row[0] as usize;
        if idx >= n_crops {
            return Err(PspcError::FormatError(format!(
                "crop index {idx} exceeds sidecar count {n_crops}"
            )));
        }
        members[idx].push((row[1] as usize, row[2] as usize));
    }
    let mut crops = Vec::with_capacity(n_crops);
    for (i, pixels) in members.into_iter().enumerate() {
        let anchor_txt = side
            .get(&format!("anchor_{i:06}"))
            .ok_or_else(|| PspcError::MissingData(format!("sidecar lacks anchor {i}")))?;
        let (ar, ac) = anchor_txt
            .split_once(',')
            .ok_or_else(|| PspcError::FormatError(format!("bad anchor entry {anchor_txt:?}")))?;
        let anchor = (
            ar.parse()
                .map_err(|_| PspcError::FormatError(format!("bad anchor row {ar:?}")))?,
            ac.parse()
                .map_err(|_| PspcError::FormatError(format!("bad anchor col {ac:?}")))?,
        );
        crops.push(CropSpec::new(pixels, anchor)?);
    }
    Ok((PatchSet::new(h, w, crops)?, side))
}
