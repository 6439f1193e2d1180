//! Self-describing tensor archive.
//!
//! ```text
//! magic "ILLMCKPT" | version u32 LE | header_len u64 LE | JSON header | f32 LE data
//! ```
//!
//! The header carries free-form JSON sections plus an index of `(name, shape,
//! offset)` into the data block, offsets counted in elements.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::HostTensor;

pub const CKPT_MAGIC: [u8; 8] = *b"ILLMCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    sections: BTreeMap<String, serde_json::Value>,
    index: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: BTreeMap<String, serde_json::Value>,
    pub tensors: BTreeMap<String, HostTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_section<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.sections.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn section<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .sections
            .get(key)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing section `{key}`")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn has_section(&self, key: &str) -> bool {
        self.sections.contains_key(key)
    }

    /// Adds every tensor of `group` under `prefix/`.
    pub fn put_group(&mut self, prefix: &str, group: BTreeMap<String, HostTensor>) {
        for (k, v) in group {
            self.tensors.insert(format!("{prefix}/{k}"), v);
        }
    }

    /// Tensors stored under `prefix/`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, HostTensor> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut index = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(CoreError::Checkpoint(format!("tensor `{name}` data does not match its shape")));
            }
            index.push(IndexEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len();
        }
        let header = serde_json::to_vec(&Header {
            sections: self.sections.clone(),
            index,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * offset);
        out.extend_from_slice(&CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CoreError::Checkpoint(m.to_string());
        if bytes.len() < 20 || bytes[..8] != CKPT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let data = &bytes[header_end..];
        if !data.len().is_multiple_of(4) {
            return Err(bad("data block is not a whole number of f32 values"));
        }
        let total = data.len() / 4;
        let mut tensors = BTreeMap::new();
        for e in header.index {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(n).filter(|end| *end <= total).ok_or_else(|| bad("tensor extends past data block"))?;
            let vals = data[4 * e.offset..4 * end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, HostTensor { shape: e.shape, data: vals });
        }
        Ok(Self {
            sections: header.sections,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
