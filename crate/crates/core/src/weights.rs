//! Named parameter storage and its binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DMFI"  u32 version=1  u64 entry_count
//! per entry:
//!   u32 path_len, path bytes (UTF-8)
//!   u8 dtype (0 = f32), u8 rank, rank × u64 dims
//!   payload: product(dims) × f32 LE
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DMFI";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Parameter path → tensor. Paths are kept sorted so files are canonical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor; a path may only be registered once.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::invalid("weights", format!("duplicate parameter path {path:?}")));
        }
        self.entries.insert(path, tensor);
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn put(&mut self, path: impl Into<String>, tensor: Tensor) {
        self.entries.insert(path.into(), tensor);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor> {
        self.get(path)
            .ok_or_else(|| Error::invalid("weights", format!("missing parameter {path:?}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total scalar count over paths not under `meta/`.
    pub fn parameter_count(&self) -> usize {
        self.iter()
            .filter(|(p, _)| !p.starts_with("meta/"))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Sets every tensor whose path starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (path, t) in self.iter_mut() {
            if path.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (path, t) in &self.entries {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.push(DTYPE_F32);
            let dims = t.shape();
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            });
        }
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: version_at as u64,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = r.u64("entry count")?;
        let mut store = WeightStore::new();
        for i in 0..count {
            let entry_at = r.pos;
            let path_len = r.u32("path length")? as usize;
            let path = std::str::from_utf8(r.take(path_len, "path")?)
                .map_err(|e| Error::Format {
                    offset: entry_at as u64 + 4,
                    msg: format!("entry {i}: path is not UTF-8 ({e})"),
                })?
                .to_owned();
            let dtype_at = r.pos;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format {
                    offset: dtype_at as u64,
                    msg: format!("entry {path:?}: unknown dtype code {dtype}"),
                });
            }
            let rank_at = r.pos;
            let rank = r.u8("rank")? as usize;
            if rank > 4 {
                return Err(Error::Format {
                    offset: rank_at as u64,
                    msg: format!("entry {path:?}: rank {rank} exceeds 4"),
                });
            }
            let mut shape = [1usize; 4];
            for d in shape[4 - rank..].iter_mut() {
                *d = r.u64("dimension")? as usize;
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(shape, data)?;
            if store.contains(&path) {
                return Err(Error::Format {
                    offset: entry_at as u64,
                    msg: format!("duplicate path {path:?}"),
                });
            }
            store.put(path, tensor);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Saves a store to `path`.
pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    store.save(path)
}

/// Loads a store from `path`.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    WeightStore::load(path)
}
