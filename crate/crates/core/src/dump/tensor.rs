//! Binary tensor codec shared by dump blocks and feature matrices.
//!
//! Layout: 8-byte magic, rank as `u64`, each dim as `u64`, then the
//! row-major payload. Everything little-endian. The element type is not in the
//! header; readers state the dtype they expect and the payload length is
//! checked against it.

use std::path::Path;

use half::slice::{HalfBitsSliceExt, HalfFloatSliceExt};
use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RPDUMP01";
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F16,
    F32,
    U32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F16 => 2,
            DType::F32 | DType::U32 => 4,
        }
    }
}

fn header(shape: &[usize], n_bytes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * shape.len() + n_bytes);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::ShapeViolation(format!(
            "shape {shape:?} holds {n} elements, got {len}"
        )));
    }
    Ok(())
}

/// Encodes floats as `F16` or `F32`. Values must be finite.
pub fn encode_f32(shape: &[usize], data: &[f32], dtype: DType) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tensor element {i}")));
    }
    let mut out = header(shape, data.len() * dtype.size());
    match dtype {
        DType::F16 => {
            for &v in data {
                let h = f16::from_f32(v);
                if !h.is_finite() {
                    return Err(Error::NonFinite(format!("{v} overflows 16-bit storage")));
                }
                out.extend_from_slice(&h.to_bits().to_le_bytes());
            }
        }
        DType::F32 => {
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::U32 => {
            return Err(Error::ShapeViolation("float data cannot be stored as u32".into()));
        }
    }
    Ok(out)
}

pub fn encode_u32(shape: &[usize], data: &[u32]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = header(shape, data.len() * 4);
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptBlock {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn split<'a>(bytes: &'a [u8], dtype: DType, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let word = |at: usize| -> Result<u64> {
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| corrupt(path, "truncated header"))
    };
    let rank = word(8)? as usize;
    if rank > MAX_RANK {
        return Err(corrupt(path, format!("rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut n: usize = 1;
    for k in 0..rank {
        let d = usize::try_from(word(16 + 8 * k)?).map_err(|_| corrupt(path, "dim overflow"))?;
        n = n.checked_mul(d).ok_or_else(|| corrupt(path, "dim overflow"))?;
        shape.push(d);
    }
    let payload = &bytes[16 + 8 * rank..];
    let want = n
        .checked_mul(dtype.size())
        .ok_or_else(|| corrupt(path, "dim overflow"))?;
    if payload.len() != want {
        return Err(corrupt(
            path,
            format!("payload of {} bytes, shape {shape:?} needs {want}", payload.len()),
        ));
    }
    Ok((shape, payload))
}

/// Decodes an `F16` or `F32` tensor into `f32`.
pub fn decode_f32(bytes: &[u8], dtype: DType, path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let (shape, payload) = split(bytes, dtype, path)?;
    let data = match dtype {
        DType::F16 => {
            let bits: Vec<u16> = payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            let mut out = vec![0.0f32; bits.len()];
            bits.reinterpret_cast::<f16>().convert_to_f32_slice(&mut out);
            out
        }
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        DType::U32 => return Err(corrupt(path, "u32 tensor read as float")),
    };
    Ok((shape, data))
}

pub fn decode_u32(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u32>)> {
    let (shape, payload) = split(bytes, DType::U32, path)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

/// Checks a decoded shape against the expected one.
pub fn expect_shape(path: &Path, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(corrupt(path, format!("shape {got:?}, expected {want:?}")));
    }
    Ok(())
}
