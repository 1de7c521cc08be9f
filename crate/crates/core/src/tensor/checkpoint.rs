//! Weight container.
//!
//! Layout (little-endian):
//! ```text
//! "PLDNET1"
//! u32 manifest length, manifest bytes (UTF-8 key=value lines)
//! u32 tensor count
//! per tensor: u16 name length, name, u8 dtype (0 = f32, 1 = f64),
//!             u8 ndim, ndim x u64 dims, raw data
//! ```

use std::fs;
use std::path::Path;

use super::{Param, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"PLDNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            _ => Err(Error::Checkpoint(format!("unknown dtype code {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn save_checkpoint(path: &Path, manifest: &str, params: &ParamSet, dtype: DType) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + params.num_scalars() * dtype.width());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    buf.extend_from_slice(manifest.as_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {}", p.name)))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(dtype as u8);
        buf.push(p.shape.len() as u8);
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match dtype {
            DType::F32 => p.data.iter().for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => p.data.iter().for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Returns the manifest text and the stored tensors (widened to `f64`).
pub fn load_checkpoint(path: &Path) -> Result<(String, ParamSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len()).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let mlen = u32::from_le_bytes(r.array()?) as usize;
    let manifest = String::from_utf8(r.take(mlen)?.to_vec())
        .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let nlen = u16::from_le_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = DType::from_code(r.array::<1>()?[0])?;
        let ndim = r.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(r.array()?) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(dtype.width()).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        params
            .push(Param::new(name, &shape, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((manifest, params))
}
