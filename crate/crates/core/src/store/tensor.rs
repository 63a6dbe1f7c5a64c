//! Binary tensor container.
//!
//! All bulk numeric artifacts (datasets, evaluation sets, denoiser dumps,
//! sensitivity maps, sample grids) share one on-disk container:
//!
//! ```text
//! offset  size        field
//! 0       4           magic, the ASCII bytes "PSPC"
//! 4       4           format version, u32 little endian (currently 1)
//! 8       4           dtype, u32 little endian: 0 = f32, 1 = f64
//! 12      4           ndim, u32 little endian
//! 16      8 * ndim    dims, u64 little endian each
//! ...     elem * size payload, row major, little endian
//! ```
//!
//! Round trips are bit exact for both dtypes: the payload is stored as the
//! raw IEEE-754 bit pattern and never reformatted.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use crate::error::{PspcError, Result};

/// Magic prefix of every tensor file.
pub const TENSOR_MAGIC: [u8; 4] = *b"PSPC";
/// Current format version.
pub const TENSOR_VERSION: u32 = 1;

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(PspcError::FormatError(format!(
                "unknown dtype code {other}"
            ))),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Typed payload of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// An n-dimensional array with explicit dims, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: TensorValues,
}

impl Tensor {
    /// Builds an f64 tensor, checking that the payload matches the dims.
    pub fn from_f64(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        Ok(Tensor {
            dims,
            values: TensorValues::F64(values),
        })
    }

    /// Builds an f32 tensor, checking that the payload matches the dims.
    pub fn from_f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        check_len(&dims, values.len())?;
        Ok(Tensor {
            dims,
            values: TensorValues::F32(values),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> Dtype {
        match self.values {
            TensorValues::F32(_) => Dtype::F32,
            TensorValues::F64(_) => Dtype::F64,
        }
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        match &self.values {
            TensorValues::F32(v) => v.len(),
            TensorValues::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &TensorValues {
        &self.values
    }

    /// Payload widened to f64. Borrows when already f64.
    pub fn as_f64(&self) -> Cow<'_, [f64]> {
        match &self.values {
            TensorValues::F64(v) => Cow::Borrowed(v),
            TensorValues::F32(v) => Cow::Owned(v.iter().map(|&x| f64::from(x)).collect()),
        }
    }

    /// Consumes the tensor, returning an f64 payload.
    pub fn into_f64(self) -> Vec<f64> {
        match self.values {
            TensorValues::F64(v) => v,
            TensorValues::F32(v) => v.into_iter().map(f64::from).collect(),
        }
    }
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    let expect = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| PspcError::FormatError("dims product overflows usize".into()))?;
    if expect != len {
        return Err(PspcError::ShapeMismatch(format!(
            "dims {dims:?} imply {expect} elements, payload has {len}"
        )));
    }
    Ok(())
}

/// Serializes a tensor into the container format.
pub fn write_tensor(tensor: &Tensor) -> Vec<u8> {
    let dtype = tensor.dtype();
    let mut out =
        Vec::with_capacity(16 + 8 * tensor.dims.len() + tensor.len() * dtype.elem_size());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &tensor.values {
        TensorValues::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorValues::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

/// Parses a tensor from the container format.
pub fn read_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 {
        return Err(PspcError::FormatError(format!(
            "tensor header needs 16 bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0..4] != TENSOR_MAGIC {
        return Err(PspcError::FormatError(format!(
            "bad magic {:02x}{:02x}{:02x}{:02x}, expected \"PSPC\"",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(PspcError::FormatError(format!(
            "unsupported tensor version {version}"
        )));
    }
    let dtype = Dtype::from_code(u32::from_le_bytes(bytes[8..12].try_into().unwrap()))?;
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let dims_end = 16 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(PspcError::FormatError(format!(
            "truncated dims block: need {dims_end} bytes, got {}",
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for chunk in bytes[16..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().unwrap());
        dims.push(usize::try_from(d).map_err(|_| {
            PspcError::FormatError(format!("dim {d} does not fit in usize"))
        })?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| PspcError::FormatError("dims product overflows usize".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * dtype.elem_size() {
        return Err(PspcError::FormatError(format!(
            "payload holds {} bytes, dims {dims:?} require {}",
            payload.len(),
            count * dtype.elem_size()
        )));
    }
    let values = match dtype {
        Dtype::F32 => TensorValues::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorValues::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(Tensor { dims, values })
}

/// Writes a tensor to disk.
pub fn write_tensor_file(tensor: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, write_tensor(tensor))?;
    Ok(())
}

/// Reads a tensor from disk.
pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    read_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_for_single_f64() {
        let t = Tensor::from_f64(vec![1], vec![0.25]).unwrap();
        let bytes = write_tensor(&t);
        // 4 magic + 4 version + 4 dtype + 4 ndim + 8 dim + 8 payload
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[0..4], b"PSPC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 1);
        assert_eq!(
            f64::from_le_bytes(bytes[24..32].try_into().unwrap()),
            0.25
        );
    }

    #[test]
    fn round_trip_preserves_bits_f64() {
        let values = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, 1e300, -7.25e-200];
        let t = Tensor::from_f64(vec![2, 3], values.clone()).unwrap();
        let back = read_tensor(&write_tensor(&t)).unwrap();
        assert_eq!(back.dims(), &[2, 3]);
        let got = match back.values() {
            TensorValues::F64(v) => v,
            _ => panic!("dtype changed"),
        };
        for (a, b) in values.iter().zip(got) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn round_trip_preserves_bits_f32() {
        let values = vec![0.0f32, -1.5, 3.25e-30, 7.0e30];
        let t = Tensor::from_f32(vec![4], values.clone()).unwrap();
        let back = read_tensor(&write_tensor(&t)).unwrap();
        assert_eq!(back.dtype(), Dtype::F32);
        let got = match back.values() {
            TensorValues::F32(v) => v.clone(),
            _ => panic!("dtype changed"),
        };
        for (a, b) in values.iter().zip(&got) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let t = Tensor::from_f64(vec![1], vec![1.0]).unwrap();
        let mut bytes = write_tensor(&t);
        bytes[0] = b'Q';
        assert!(matches!(
            read_tensor(&bytes),
            Err(PspcError::FormatError(_))
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = Tensor::from_f64(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = write_tensor(&t);
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            read_tensor(&bytes),
            Err(PspcError::FormatError(_))
        ));
    }

    #[test]
    fn rejects_wrong_payload_len_at_build() {
        assert!(matches!(
            Tensor::from_f64(vec![2, 2], vec![1.0]),
            Err(PspcError::ShapeMismatch(_))
        ));
    }
}
