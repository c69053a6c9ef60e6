//! Portable container for named `f32` arrays plus a JSON header.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LLTXARC\0"
//! version  u32
//! hdr_len  u64
//! header   hdr_len bytes of UTF-8 JSON: {"meta": ..., "tensors": [{name, shape, offset, len}]}
//! data     concatenated row-major f32 arrays; offsets/lengths counted in elements
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LLTXARC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
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
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Arrays whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a NamedArray)> {
        self.arrays
            .iter()
            .filter_map(move |a| a.name.strip_prefix(prefix).map(|n| (n, a)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let expected: usize = a.shape.iter().product();
            if expected != a.data.len() {
                return Err(Error::Shape(format!(
                    "array {} has shape {:?} but {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            tensors.push(Entry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
                len: a.data.len(),
            });
            offset += a.data.len();
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Validation(format!("archive is corrupt: {what}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hdr_len).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[20 + hdr_len..];
        let mut arrays = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let start = 4 * e.offset;
            let end = start + 4 * e.len;
            let raw = data
                .get(start..end)
                .ok_or_else(|| corrupt(&format!("array {} out of range", e.name)))?;
            if e.shape.iter().product::<usize>() != e.len {
                return Err(corrupt(&format!("array {} shape/length mismatch", e.name)));
            }
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = Archive::new(serde_json::json!({})).to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Archive::from_bytes(b"not an archive at all").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e3f32..1e3, 0..40), k in 1usize..4) {
            let n = values.len() / k * k;
            let mut a = Archive::new(serde_json::json!({"step": 3, "lr": 1e-4}));
            a.push("w", vec![k, n / k], values[..n].to_vec());
            a.push("b", vec![1], vec![0.5]);
            let bytes = a.to_bytes().unwrap();
            let back = Archive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
