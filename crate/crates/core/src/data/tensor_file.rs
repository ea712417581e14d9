//! The TSMT tensor file.
//!
//! ```text
//! bytes 0..4   magic "TSMT"
//! u32 LE       version (1 = float32 payload, 2 = float64 payload)
//! u32 LE       ndim
//! ndim x u32   dims
//! payload      row-major values, little-endian
//! ```
//!
//! Samples and sequences use version 1. Checkpoints use version 2 so that a
//! saved model reloads bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSMT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }
}

pub fn write_tensor<W: Write>(mut w: W, tensor: &Tensor, precision: Precision) -> Result<()> {
    w.write_all(&encode_tensor(tensor, precision))?;
    Ok(())
}

pub fn encode_tensor(tensor: &Tensor, precision: Precision) -> Vec<u8> {
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut out = Vec::with_capacity(12 + 4 * tensor.ndim() + width * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&precision.version().to_le_bytes());
    out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match precision {
        Precision::F32 => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor record; float32 payloads are widened to f64.
pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"TSMT\"")));
    }
    let version = read_u32(&mut r)?;
    let width = match version {
        1 => 4,
        2 => 8,
        v => return Err(Error::Format(format!("unsupported TSMT version {v}"))),
    };
    let ndim = read_u32(&mut r)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::Format(format!("implausible rank {ndim}")));
    }
    let shape = (0..ndim)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * width];
    r.read_exact(&mut payload)?;
    let data = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    };
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_tensor(path: &Path, tensor: &Tensor, precision: Precision) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_tensor(tensor, precision))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    read_tensor(bytes.as_slice())
}

/// Reads consecutive tensor records until the input is exhausted.
pub fn read_all(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut cursor = bytes;
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(read_tensor(&mut cursor)?);
    }
    Ok(out)
}
