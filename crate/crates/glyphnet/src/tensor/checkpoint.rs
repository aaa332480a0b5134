//! Binary tensor stream used by model checkpoints.
//!
//! Layout, all integers little-endian:
//!   "GLYF" | version: u32 | tensor count: u32
//!   then per tensor: ndim: u32 | dims: u32 * ndim | payload: f32 * prod(dims)
//! Payloads are always f32 regardless of the in-memory scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub const MAGIC: [u8; 4] = *b"GLYF";
pub const VERSION: u32 = 1;

const MAX_NDIM: u32 = 8;

pub fn write_tensors<S: Scalar, W: Write>(
    w: &mut W,
    tensors: &[&Tensor<S>],
) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::MalformedCheckpoint("unexpected end of stream".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<S: Scalar, R: Read>(r: &mut R) -> Result<Vec<Tensor<S>>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedCheckpoint("unexpected end of stream".into()))?;
    if magic != MAGIC {
        return Err(Error::MalformedCheckpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::MalformedCheckpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let ndim = read_u32(r)?;
        if ndim > MAX_NDIM {
            return Err(Error::MalformedCheckpoint(format!(
                "tensor rank {ndim} exceeds limit {MAX_NDIM}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = read_u32(r)? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::MalformedCheckpoint("tensor size overflow".into()))?;
            shape.push(d);
        }
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::MalformedCheckpoint("unexpected end of stream".into()))?;
        let data: Vec<S> = buf
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    Ok(tensors)
}

pub fn save<S: Scalar>(path: &Path, tensors: &[&Tensor<S>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensors(&mut w, tensors).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<Vec<Tensor<S>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensors(&mut BufReader::new(file))
}
