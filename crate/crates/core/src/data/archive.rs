//! Binary clip-dataset archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "EGSCLIPS"
//! version    u32
//! T, N, C    u32 × 3          tensor dims of every clip (C = 4)
//! meta_len   u32, meta JSON   preparation settings
//! 3 × split  u64 count, then `count` clips        (train, val, test)
//! clip       u32 len + session utf-8, u64 anchor, u64 anchor_frame,
//!            u8 scenario, u8 label, T·N mask bytes, T·N·C f64 features
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Action, Clip, ClipMeta, DatasetSplits, PrepareConfig, Scenario};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"EGSCLIPS";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub prepare: PrepareConfig,
    pub split_seed: u64,
    pub split_by_session: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipArchive {
    pub meta: ArchiveMeta,
    pub splits: DatasetSplits,
}

impl ClipArchive {
    pub fn history(&self) -> usize {
        self.meta.prepare.clip.history
    }

    pub fn slots(&self) -> usize {
        self.meta.prepare.clip.quota.total()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (t, n) = (self.history(), self.slots());
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        put_u32(&mut out, ARCHIVE_VERSION);
        for d in [t, n, 4] {
            put_u32(&mut out, d as u32);
        }
        let meta = serde_json::to_vec(&self.meta)?;
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);
        for split in [&self.splits.train, &self.splits.val, &self.splits.test] {
            out.extend_from_slice(&(split.len() as u64).to_le_bytes());
            for clip in split {
                if clip.features.dim() != (t, n, 4) {
                    return Err(Error::shape(
                        "archived clip",
                        format!("({t}, {n}, 4)"),
                        format!("{:?}", clip.features.dim()),
                    ));
                }
                put_clip(&mut out, clip);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(Error::Format("not a clip archive (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let t = r.u32()? as usize;
        let n = r.u32()? as usize;
        let c = r.u32()? as usize;
        if c != 4 {
            return Err(Error::Format(format!("feature width {c}, expected 4")));
        }
        let meta_len = r.u32()? as usize;
        let meta: ArchiveMeta = serde_json::from_slice(r.take(meta_len)?)?;
        if meta.prepare.clip.history != t || meta.prepare.clip.quota.total() != n {
            return Err(Error::Format("archive dims disagree with its metadata".into()));
        }
        let mut splits: [Vec<Clip>; 3] = Default::default();
        for split in splits.iter_mut() {
            let count = r.u64()? as usize;
            for _ in 0..count {
                split.push(read_clip(&mut r, t, n)?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after archive".into()));
        }
        let [train, val, test] = splits;
        Ok(ClipArchive {
            meta,
            splits: DatasetSplits { train, val, test },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_clip(out: &mut Vec<u8>, clip: &Clip) {
    let s = clip.meta.session.as_bytes();
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s);
    out.extend_from_slice(&clip.meta.anchor.to_le_bytes());
    out.extend_from_slice(&clip.meta.anchor_frame.to_le_bytes());
    out.push(clip.meta.scenario.code());
    out.push(clip.label.index() as u8);
    out.extend(clip.mask.iter().map(|&m| m as u8));
    for v in clip.features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("archive truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_clip(r: &mut Reader<'_>, t: usize, n: usize) -> Result<Clip> {
    let len = r.u32()? as usize;
    let session = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::Format("session id is not utf-8".into()))?
        .to_owned();
    let anchor = r.u64()?;
    let anchor_frame = r.u64()?;
    let scenario = Scenario::from_code(r.u8()?)?;
    let label = Action::from_index(r.u8()? as usize)
        .map_err(|_| Error::Format("label out of range".into()))?;
    let mask_bytes = r.take(t * n)?;
    let mut mask = Vec::with_capacity(t * n);
    for &b in mask_bytes {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return Err(Error::Format(format!("mask byte {b} is not 0/1"))),
        }
    }
    let mut features = Vec::with_capacity(t * n * 4);
    for _ in 0..t * n * 4 {
        features.push(r.f64()?);
    }
    Ok(Clip {
        features: Array3::from_shape_vec((t, n, 4), features).expect("length checked"),
        mask: Array2::from_shape_vec((t, n), mask).expect("length checked"),
        label,
        meta: ClipMeta {
            session,
            anchor,
            anchor_frame,
            scenario,
        },
    })
}
