//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes  "MOET"
//! version   u16      1
//! count     u64      number of entries
//! entry*    name_len u32, name (UTF-8), dtype u8 (1 = f64), rank u32,
//!           dims u64 × rank, data f64 × prod(dims)
//! ```
//!
//! Readers reject unknown versions and dtypes, truncated payloads, and
//! trailing bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MOET";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<(String, Tensor)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Container(format!("duplicate entry `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but reports a missing entry as [`Error::MissingTensor`].
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(i).1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Container("bad magic, not a MOET file".into()));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(r.array("entry count")?);
        let mut container = TensorContainer::new();
        for i in 0..count {
            let len = u32::from_le_bytes(r.array("name length")?) as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Container(format!("entry {i}: name is not UTF-8")))?
                .to_string();
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Container(format!(
                    "entry `{name}`: unsupported dtype {dtype}"
                )));
            }
            let rank = u32::from_le_bytes(r.array("rank")?) as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.array("dims")?);
                shape.push(
                    usize::try_from(d).map_err(|_| {
                        Error::Container(format!("entry `{name}`: dim {d} too large"))
                    })?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Container(format!("entry `{name}`: payload truncated")))?;
            let data: Vec<f64> = r
                .take(n * 8, "data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Container(format!("entry `{name}`: {e}")))?;
            container.insert(name, tensor)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Container(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(container)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
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
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Container(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}
