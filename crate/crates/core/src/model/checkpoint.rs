//! Binary tensor container.
//!
//! Layout (little-endian): magic `AEAN`, `u32` version, `u32` entry count,
//! then per entry in ascending name order: `u32` name length, UTF-8 name,
//! `u8` dtype code, `u8` rank, `rank × u64` extents, raw values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"AEAN";
pub const FORMAT_VERSION: u32 = 1;

const CODE_F32: u8 = 0;
const CODE_F64: u8 = 1;
const CODE_U64: u8 = 2;
const CODE_U8: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, Entry>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint".into(),
        reason: reason.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
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
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor<T: Element>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let entry = match T::DTYPE {
            DType::F32 => Entry::F32(t.cast()),
            DType::F64 => Entry::F64(t.cast()),
        };
        self.entries.insert(name.into(), entry);
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.entries.insert(name.into(), Entry::U64(v));
    }

    pub fn insert_bytes(&mut self, name: impl Into<String>, v: Vec<u8>) {
        self.entries.insert(name.into(), Entry::U8(v));
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| bad(format!("missing entry {name:?}")))
    }

    /// A float entry converted to `T`.
    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        match self.entry(name)? {
            Entry::F32(t) => Ok(t.cast()),
            Entry::F64(t) => Ok(t.cast()),
            _ => Err(bad(format!("entry {name:?} is not a float tensor"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.entry(name)? {
            Entry::U64(v) => Ok(v),
            _ => Err(bad(format!("entry {name:?} is not u64"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.entry(name)? {
            Entry::U8(v) => Ok(v),
            _ => Err(bad(format!("entry {name:?} is not u8"))),
        }
    }

    /// Float tensor entries whose name starts with `prefix`, prefix removed.
    pub fn tensors_with_prefix<T: Element>(&self, prefix: &str) -> Result<BTreeMap<String, Tensor<T>>> {
        self.entries
            .keys()
            .filter_map(|k| k.strip_prefix(prefix).map(|rest| (k, rest)))
            .map(|(k, rest)| Ok((rest.to_string(), self.tensor(k)?)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (code, shape): (u8, Vec<usize>) = match entry {
                Entry::F32(t) => (CODE_F32, t.shape().to_vec()),
                Entry::F64(t) => (CODE_F64, t.shape().to_vec()),
                Entry::U64(v) => (CODE_U64, vec![v.len()]),
                Entry::U8(v) => (CODE_U8, vec![v.len()]),
            };
            out.push(code);
            out.push(shape.len() as u8);
            for &e in &shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            match entry {
                Entry::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::U64(v) => v.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            let code = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| bad("extent overflow"))?;
            let entry = match code {
                CODE_F32 => {
                    let raw = r.take(n.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Entry::F32(Tensor::new(&shape, data)?)
                }
                CODE_F64 => {
                    let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Entry::F64(Tensor::new(&shape, data)?)
                }
                CODE_U64 if rank == 1 => {
                    let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
                    Entry::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                CODE_U8 if rank == 1 => Entry::U8(r.take(n)?.to_vec()),
                other => return Err(bad(format!("entry {name:?}: unknown dtype code {other} for rank {rank}"))),
            };
            if entries.insert(name.clone(), entry).is_some() {
                return Err(bad(format!("duplicate entry {name:?}")));
            }
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after the last entry"));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
