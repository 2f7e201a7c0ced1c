//! MRT1 binary tensor files.
//!
//! Layout: magic `MRT1`, `u8` dtype code (0 = real64, 1 = complex128),
//! `u8` rank, one little-endian `u32` per dimension, then the row-major
//! payload as little-endian `f64`s (complex values interleaved `re, im`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{CTensor, Complex64, DType, Tensor};

pub const MAGIC: &[u8; 4] = b"MRT1";

/// A tensor read from disk whose dtype is known only at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Real(Tensor<f64>),
    Complex(CTensor),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::Real(_) => DType::Real64,
            AnyTensor::Complex(_) => DType::Complex128,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::Real(t) => t.dims(),
            AnyTensor::Complex(t) => t.dims(),
        }
    }

    pub fn into_real(self) -> Result<Tensor<f64>> {
        match self {
            AnyTensor::Real(t) => Ok(t),
            AnyTensor::Complex(_) => Err(Error::Format(
                "expected a real64 tensor, found complex128".into(),
            )),
        }
    }

    pub fn into_complex(self) -> Result<CTensor> {
        match self {
            AnyTensor::Complex(t) => Ok(t),
            AnyTensor::Real(_) => Err(Error::Format(
                "expected a complex128 tensor, found real64".into(),
            )),
        }
    }
}

fn header(dtype: DType, dims: &[usize]) -> Result<Vec<u8>> {
    if dims.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} exceeds 255", dims.len())));
    }
    let mut out = Vec::with_capacity(6 + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(t: &Tensor<f64>) -> Result<Vec<u8>> {
    let mut out = header(DType::Real64, t.dims())?;
    out.reserve(t.len() * 8);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_complex(t: &CTensor) -> Result<Vec<u8>> {
    let mut out = header(DType::Complex128, t.dims())?;
    out.reserve(t.len() * 16);
    for z in t.data() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn encode(t: &AnyTensor) -> Result<Vec<u8>> {
    match t {
        AnyTensor::Real(t) => encode_real(t),
        AnyTensor::Complex(t) => encode_complex(t),
    }
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[at..at + 8]);
    f64::from_le_bytes(b)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an MRT1 tensor".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let ndim = bytes[5] as usize;
    let payload_start = 6 + 4 * ndim;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let at = 6 + 4 * i;
            u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let expected = count
        .checked_mul(dtype.width())
        .and_then(|n| n.checked_add(payload_start))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header declares {}",
            bytes.len() - payload_start,
            expected - payload_start
        )));
    }
    let p = &bytes[payload_start..];
    match dtype {
        DType::Real64 => {
            let data = (0..count).map(|i| f64_at(p, 8 * i)).collect();
            Ok(AnyTensor::Real(Tensor::new(dims, data)?))
        }
        DType::Complex128 => {
            let data = (0..count)
                .map(|i| Complex64::new(f64_at(p, 16 * i), f64_at(p, 16 * i + 8)))
                .collect();
            Ok(AnyTensor::Complex(Tensor::new(dims, data)?))
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    decode(&bytes)
}

pub fn read_real(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    read_tensor(path)?.into_real()
}

pub fn write_real(path: impl AsRef<Path>, t: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_real(t)?).map_err(|e| Error::io(path, e))
}

pub fn write_complex(path: impl AsRef<Path>, t: &CTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_complex(t)?).map_err(|e| Error::io(path, e))
}
