//! `TCT1` raw tensor files: magic `TCT1`, `u32` rank, `rank × u64` dims,
//! `u8` precision (4 or 8), then little-endian values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"TCT1";

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * t.rank() + t.len() * T::PRECISION_CODE as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(T::PRECISION_CODE);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decode a `TCT1` blob, converting to `T` when the stored precision differs.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |m: &str| TensorError::Format(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("missing TCT1 magic"));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = 8 + 8 * rank + 1;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let code = bytes[header - 1];
    let n = numel(&shape);
    let body = &bytes[header..];
    let data: Vec<T> = match code {
        4 if body.len() == 4 * n => body
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect(),
        8 if body.len() == 8 * n => body
            .chunks_exact(8)
            .map(|c| T::lit(f64::read_le(c)))
            .collect(),
        4 | 8 => return Err(bad("payload length does not match shape")),
        c => return Err(TensorError::Format(format!("unknown precision code {c}"))),
    };
    Tensor::new(&shape, data)
}

pub fn write<T: Real>(mut w: impl Write, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

pub fn read<T: Real>(mut r: impl Read) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}
