//! Versioned binary checkpoint of a [`ModelParams`].
//!
//! ```text
//! magic      8 bytes  "EGSMODEL"
//! version    u32
//! config     u32 len + JSON
//! count      u32
//! tensor     u32 len + name, u32 ndim, u64 × ndim dims, f64 LE row-major payload
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EGSMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let tensors = params.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?)?;
    let mut params = ModelParams::zeros(&config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let count = c.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut slices = params.slices_mut();
    for ((name, shape), dst) in expected.iter().zip(slices.iter_mut()) {
        let n = c.u32()? as usize;
        let got = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        if got != name {
            return Err(Error::Format(format!("expected tensor {name}, found {got}")));
        }
        let ndim = c.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(c.u64()? as usize);
        }
        if &dims != shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {dims:?}, expected {shape:?}"
            )));
        }
        for v in dst.iter_mut() {
            *v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}
