//! Named-tensor checkpoint container.
//!
//! Layout: `b"RLCK"`, `u32` version, `u64` header length, a JSON header
//! `{"metadata": …, "tensors": [{"name", "shape", "offset", "len"}]}`, then the
//! concatenated little-endian f32 data. Offsets and lengths count f32 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = Entry { name: t.name.clone(), shape: t.shape.clone(), offset, len: t.data.len() };
                offset += t.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header { metadata: self.metadata.clone(), tensors: entries }).expect("header serializes");
        let mut buf = Vec::with_capacity(16 + header.len() + offset * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |r: &str| ModelError::Checkpoint(r.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(&e.to_string()))?;
        let data = &bytes[hend..];
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                if e.shape.iter().product::<usize>() != e.len {
                    return Err(bad(&format!("tensor {} shape/len mismatch", e.name)));
                }
                let raw = data.get(e.offset * 4..(e.offset + e.len) * 4).ok_or_else(|| bad("truncated data"))?;
                let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                Ok(NamedTensor { name: e.name, shape: e.shape, data: values })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { metadata: header.metadata, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).map_err(|e| ModelError::Io(format!("{}: {e}", p.display())))?;
        }
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| ModelError::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
