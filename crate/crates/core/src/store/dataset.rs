//! Image datasets.
//!
//! A dataset is a stack of N images with one shared (H, W, C) shape,
//! channel-last, stored flat in f64. Ingestion from 8-bit rasters maps
//! pixel value v to 2*(v/255) - 1, so all dataset values live in [-1, 1].
//! Images are ordered by file name (lexicographic) so a directory always
//! ingests to the same dataset, and a content hash identifies the result.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PspcError, Result};
use crate::store::manifest::RunManifest;
use crate::store::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// Shared shape of every image in a dataset, channel-last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ImageShape {
    pub fn new(h: usize, w: usize, c: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(PspcError::ShapeMismatch(format!(
                "image dims must be positive, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(PspcError::ShapeMismatch(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        Ok(ImageShape { h, w, c })
    }

    /// Values per image.
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per image (channels not counted).
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Flat index of (row, col, channel).
    #[inline]
    pub fn flat(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.w + col) * self.c + ch
    }
}

/// One ingested source file: name and content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub name: String,
    pub sha256: String,
}

/// A stack of images sharing one shape, with precomputed squared norms.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    name: String,
    shape: ImageShape,
    data: Vec<f64>,
    norms: Vec<f64>,
    hash: String,
    sources: Vec<SourceFile>,
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn content_hash(shape: ImageShape, data: &[f64]) -> String {
    let mut hasher = Sha256::new();
    let n = data.len() / shape.len();
    for d in [n, shape.h, shape.w, shape.c] {
        hasher.update((d as u64).to_le_bytes());
    }
    for v in data {
        hasher.update(v.to_le_bytes());
    }
    hex_digest(hasher)
}

impl ImageDataset {
    /// Builds a dataset from raw values (length must be a multiple of the
    /// image size, values within [-1, 1]).
    pub fn from_values(name: &str, shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(PspcError::EmptyDataset);
        }
        if data.len() % shape.len() != 0 {
            return Err(PspcError::ShapeMismatch(format!(
                "{} values do not tile images of {} values",
                data.len(),
                shape.len()
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(PspcError::RangeError(format!(
                    "value {v} at flat index {i} outside [-1, 1]"
                )));
            }
        }
        let norms = data
            .chunks_exact(shape.len())
            .map(|img| img.iter().map(|&x| x * x).sum())
            .collect();
        let hash = content_hash(shape, &data);
        Ok(ImageDataset {
            name: name.to_owned(),
            shape,
            data,
            norms,
            hash,
            sources: Vec::new(),
        })
    }

    /// Ingests a directory of 8-bit rasters (png or bmp), lexicographic by
    /// file name. Grayscale maps to C=1, RGB to C=3; pixel value v becomes
    /// 2*(v/255) - 1.
    pub fn from_image_dir(dir: &Path, name: &str) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| {
                        let e = e.to_ascii_lowercase();
                        e == "png" || e == "bmp"
                    })
                    .unwrap_or(false)
            })
            .collect();
        files.sort_by_key(|p| p.file_name().map(|n| n.to_owned()));
        if files.is_empty() {
            return Err(PspcError::EmptyDataset);
        }

        let mut shape: Option<ImageShape> = None;
        let mut data = Vec::new();
        let mut sources = Vec::new();
        for path in &files {
            let bytes = fs::read(path)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            sources.push(SourceFile {
                name: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sha256: hex_digest(hasher),
            });
            let img = image::load_from_memory(&bytes).map_err(|e| {
                PspcError::FormatError(format!("{}: {e}", path.display()))
            })?;
            let (raw, h, w, c): (Vec<u8>, usize, usize, usize) = match img {
                image::DynamicImage::ImageLuma8(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    (buf.into_raw(), h, w, 1)
                }
                image::DynamicImage::ImageRgb8(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    (buf.into_raw(), h, w, 3)
                }
                other => {
                    return Err(PspcError::FormatError(format!(
                        "{}: unsupported pixel layout {:?}, want 8-bit gray or rgb",
                        path.display(),
                        other.color()
                    )))
                }
            };
            let this = ImageShape::new(h, w, c)?;
            match shape {
                None => shape = Some(this),
                Some(s) if s != this => {
                    return Err(PspcError::ShapeMismatch(format!(
                        "{}: image is {h}x{w}x{c}, dataset is {}x{}x{}",
                        path.display(),
                        s.h,
                        s.w,
                        s.c
                    )))
                }
                _ => {}
            }
            data.extend(raw.iter().map(|&v| u8_to_unit(v)));
        }
        let mut ds = Self::from_values(name, shape.unwrap(), data)?;
        ds.sources = sources;
        Ok(ds)
    }

    /// Loads a dataset from a rank-4 (N, H, W, C) tensor file whose values
    /// are already in [-1, 1].
    pub fn from_tensor_file(path: &Path, name: &str) -> Result<Self> {
        let tensor = read_tensor_file(path)?;
        let dims = tensor.dims().to_vec();
        if dims.len() != 4 {
            return Err(PspcError::ShapeMismatch(format!(
                "dataset tensor must be rank 4 (N, H, W, C), got rank {}",
                dims.len()
            )));
        }
        let shape = ImageShape::new(dims[1], dims[2], dims[3])?;
        if dims[0] == 0 {
            return Err(PspcError::EmptyDataset);
        }
        Self::from_values(name, shape, tensor.into_f64())
    }

    /// Writes the dataset as `images.pspc` plus `manifest.txt` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tensor = Tensor::from_f64(
            vec![self.n(), self.shape.h, self.shape.w, self.shape.c],
            self.data.clone(),
        )?;
        write_tensor_file(&tensor, &dir.join("images.pspc"))?;
        let mut m = RunManifest::new();
        m.set("name", &self.name)?;
        m.set("dataset_hash", &self.hash)?;
        m.set("normalization", "unit-range")?;
        m.set("n_images", self.n())?;
        for (i, s) in self.sources.iter().enumerate() {
            m.set(&format!("source_{i:04}"), format!("{} {}", s.sha256, s.name))?;
        }
        m.write(&dir.join("manifest.txt"))?;
        Ok(())
    }

    /// Reads back a dataset written by [`ImageDataset::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let m = RunManifest::read(&dir.join("manifest.txt"))?;
        let name = m.get("name").unwrap_or("dataset").to_owned();
        let mut ds = Self::from_tensor_file(&dir.join("images.pspc"), &name)?;
        let mut sources = Vec::new();
        for (k, v) in m.entries() {
            if k.starts_with("source_") {
                if let Some((sha, file)) = v.split_once(' ') {
                    sources.push(SourceFile {
                        name: file.to_owned(),
                        sha256: sha.to_owned(),
                    });
                }
            }
        }
        ds.sources = sources;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.shape.len()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Hex sha-256 over dims and payload bits; identifies the content.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn sources(&self) -> &[SourceFile] {
        &self.sources
    }

    /// Image i as a flat slice of H*W*C values.
    #[inline]
    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.shape.len();
        &self.data[i * len..(i + 1) * len]
    }

    /// All images, flat.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Precomputed squared L2 norm of each image.
    #[inline]
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Pixelwise mean over all images, accumulated in index order.
    pub fn mean_image(&self) -> Vec<f64> {
        let len = self.shape.len();
        let mut mean = vec![0.0; len];
        for i in 0..self.n() {
            let img = self.image(i);
            for (m, &x) in mean.iter_mut().zip(img) {
                *m += x;
            }
        }
        let inv = 1.0 / self.n() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mean
    }
}

/// Maps an 8-bit pixel value onto [-1, 1]. Written as a single division
/// of exact integers so the result is correctly rounded; the textbook
/// form 2(v/255) - 1 cancels badly near zero.
#[inline]
pub fn u8_to_unit(v: u8) -> f64 {
    (2.0 * f64::from(v) - 255.0) / 255.0
}
