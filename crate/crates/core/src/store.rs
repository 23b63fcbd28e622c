//! Flat named-tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"NTF1"
//! u32  metadata length, then that many bytes of UTF-8 JSON
//! u32  tensor count
//! per tensor:
//!   u32  name length, then the UTF-8 name
//!   u32  number of axes, then one u64 extent per axis
//!   f64  values, row-major
//! ```

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NTF1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensors {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn new<M: Serialize>(metadata: &M, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        Ok(NamedTensors {
            metadata: serde_json::to_value(metadata).map_err(|e| Error::Serde(e.to_string()))?,
            tensors,
        })
    }

    pub fn metadata_as<M: DeserializeOwned>(&self) -> Result<M> {
        serde_json::from_value(self.metadata.clone()).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("json value always serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "not a named-tensor file".into(),
            });
        }
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format {
            offset: meta_at as u64,
            detail: format!("metadata: {e}"),
        })?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format {
                offset: at as u64,
                detail: "tensor name is not UTF-8".into(),
            })?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                detail: "trailing bytes".into(),
            });
        }
        Ok(NamedTensors { metadata, tensors })
    }

    /// Writes via a temporary file in the same directory, then renames.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        Self::decode(&bytes)
    }
}

/// Writes `bytes` to `path` so that readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(Error::Format {
            offset: self.pos as u64,
            detail: "truncated".into(),
        })?;
        self.pos += n;
        Ok(s)
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
