//! `NDAT` tensor container.
//!
//! Layout: magic `NDAT`, u32 version (1), u32 rank, `rank` x u64 dims, then
//! the row-major f32 payload. All integers and floats are little-endian.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NDAT";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Ndat(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor<f32>> {
    let b = &mut bytes;
    if take(b, 4, "magic")? != MAGIC {
        return Err(Error::Ndat("bad magic (expected `NDAT`)".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Ndat(format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(take(b, 4, "rank")?.try_into().unwrap()) as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Ndat(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(b, 8, "dims")?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| Error::Ndat(format!("dimension {d} too large")))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Ndat("element count overflows".into()))?;
    if b.len() != n * 4 {
        return Err(Error::Ndat(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            b.len(),
            n * 4
        )));
    }
    let data = b
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Ndat(e.to_string()))
}

pub fn write(path: &Path, t: &Tensor<f32>) -> Result<()> {
    crate::io::atomic_write(path, &encode(t))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Ndat(format!("{}: {e}", path.display())))
}
