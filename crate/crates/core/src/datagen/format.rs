//! PIKD container, little-endian:
//!
//! ```text
//! "PIKD" | version u32 | kind u64 | N u64 | d u64 | states f64[N·d] | rhs f64[N·d] | meta_len u64 | meta
//! "PIKD" | version u32 | kind u64 | count u64 | p+1 u64 | d u64 | dt f64 | states f64[count·(p+1)·d] | meta_len u64 | meta
//! ```
//!
//! The second layout is used for trajectory kinds (code `>= 100`); `meta`
//! is UTF-8 JSON.

use std::path::Path;

use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use super::{CollocationSet, DatasetKind, DatasetMeta, TrajectorySet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PIKD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Collocations(CollocationSet),
    Trajectories(TrajectorySet),
}

impl From<CollocationSet> for Dataset {
    fn from(c: CollocationSet) -> Self {
        Dataset::Collocations(c)
    }
}

impl From<TrajectorySet> for Dataset {
    fn from(t: TrajectorySet) -> Self {
        Dataset::Trajectories(t)
    }
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Collocations(c) => c.kind,
            Dataset::Trajectories(t) => t.kind,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind().code().to_le_bytes());
        let meta = match self {
            Dataset::Collocations(c) => {
                out.reserve(16 * c.states.len() + 64);
                out.extend_from_slice(&(c.len() as u64).to_le_bytes());
                out.extend_from_slice(&(c.dim() as u64).to_le_bytes());
                for v in c.states.iter().chain(c.rhs.iter()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                &c.meta
            }
            Dataset::Trajectories(t) => {
                out.reserve(8 * t.states.len() + 64);
                let (count, len, d) = t.states.dim();
                for n in [count, len, d] {
                    out.extend_from_slice(&(n as u64).to_le_bytes());
                }
                out.extend_from_slice(&t.dt.to_le_bytes());
                for v in t.states.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                &t.meta
            }
        };
        let json = serde_json::to_vec(meta).expect("metadata serialization");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?.to_vec();
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let code = r.u64("kind")?;
        let kind = DatasetKind::from_code(code).ok_or_else(|| r.error_at(8, format!("unknown kind {code}")))?;
        let out = if kind.is_trajectory() {
            let count = r.u64("count")? as usize;
            let len = r.u64("snapshot count")? as usize;
            let d = r.u64("d")? as usize;
            let dt = r.f64("dt")?;
            let total = checked_len(&[count, len, d], &r)?;
            let states = Array3::from_shape_vec((count, len, d), r.f64s(total, "states")?).expect("shape");
            let meta = r.meta()?;
            Dataset::Trajectories(TrajectorySet { kind, dt, states, meta })
        } else {
            let n = r.u64("N")? as usize;
            let d = r.u64("d")? as usize;
            let total = checked_len(&[n, d], &r)?;
            let states = Array2::from_shape_vec((n, d), r.f64s(total, "states")?).expect("shape");
            let rhs = Array2::from_shape_vec((n, d), r.f64s(total, "rhs")?).expect("shape");
            let meta = r.meta()?;
            Dataset::Collocations(CollocationSet { kind, states, rhs, meta })
        };
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(out)
    }
}

fn checked_len(dims: &[usize], r: &Reader) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.bytes.len()))
        .ok_or_else(|| r.error_at(r.pos, format!("shape {dims:?} exceeds file size")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Parse {
            offset: offset as u64,
            message,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn meta(&mut self) -> Result<DatasetMeta> {
        let len = self.u64("meta_len")? as usize;
        let start = self.pos;
        let raw = self.take(len, "metadata")?;
        serde_json::from_slice(raw).map_err(|e| self.error_at(start + e.column().saturating_sub(1), format!("metadata: {e}")))
    }
}

pub fn write_dataset(path: &Path, set: &Dataset) -> Result<()> {
    std::fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

pub fn read_collocations(path: &Path) -> Result<CollocationSet> {
    match read_dataset(path)? {
        Dataset::Collocations(c) => Ok(c),
        Dataset::Trajectories(_) => Err(Error::config(path.display().to_string(), "expected a collocation file")),
    }
}

pub fn read_trajectories(path: &Path) -> Result<TrajectorySet> {
    match read_dataset(path)? {
        Dataset::Trajectories(t) => Ok(t),
        Dataset::Collocations(_) => Err(Error::config(path.display().to_string(), "expected a trajectory file")),
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
