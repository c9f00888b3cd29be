//! Binary tensor container shared by spectrograms, masks, filters and
//! covariances.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "DSTNSR01"            8-byte magic
//! dtype                 1 = f32, 2 = f64, 3 = complex64 (re, im as f32)
//! ndim
//! dims[ndim]
//! payload               row-major, little-endian
//! ```
//!
//! An optional sidecar `<file>.json` carries free-form metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSTNSR01";

const MAX_NDIM: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    Complex64 = 3,
}

impl DType {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::Complex64),
            other => Err(Error::Format(format!("unknown tensor dtype code {other}"))),
        }
    }

    fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::Complex64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Complex64(Vec<Complex32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::Complex64(_) => DType::Complex64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Complex64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real payload widened to `f64`; complex payloads are rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self {
            TensorData::F32(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            TensorData::F64(v) => Ok(v.clone()),
            TensorData::Complex64(_) => {
                Err(Error::Format("expected a real tensor, found complex64".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Format(format!(
                "tensor dims {dims:?} imply {expected} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::Format(format!("tensor write failed: {e}"));
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(self.data.dtype() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * self.data.dtype().element_size());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex64(v) => v.iter().for_each(|c| {
                buf.extend_from_slice(&c.re.to_le_bytes());
                buf.extend_from_slice(&c.im.to_le_bytes());
            }),
        }
        w.write_all(&buf).map_err(io)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated tensor header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let dtype = DType::from_code(read_u32(&mut r)?)?;
        let ndim = read_u32(&mut r)?;
        if ndim > MAX_NDIM {
            return Err(Error::Format(format!("implausible tensor rank {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r)? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::Format(format!("tensor read failed: {e}")))?;
        if payload.len() != count * dtype.element_size() {
            return Err(Error::Format(format!(
                "tensor payload has {} bytes, header implies {}",
                payload.len(),
                count * dtype.element_size()
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DType::Complex64 => TensorData::Complex64(
                payload
                    .chunks_exact(8)
                    .map(|b| {
                        Complex32::new(
                            f32::from_le_bytes(b[..4].try_into().unwrap()),
                            f32::from_le_bytes(b[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
        };
        Tensor::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_from(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated tensor header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Reads the sidecar next to `path`, `Ok(None)` when there is none.
pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))
}
