//! Named-tensor archive.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CGWT"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     manifest length in bytes, u64 little-endian
//! 16      L     manifest: UTF-8 text, one record per line
//! 16+L    ...   payload: raw little-endian f32 data
//! ```
//!
//! Manifest records:
//!
//! ```text
//! meta <key> <value...>
//! tensor <name> f32 <N>x<C>x<H>x<W> <byte offset> <byte length>
//! ```
//!
//! Offsets are relative to the start of the payload and tensors appear in
//! manifest order. Keys and names contain no whitespace; a meta value runs
//! to the end of its line.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::Error;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"CGWT";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic: expected CGWT, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated payload: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: String,
        needed: u64,
        available: u64,
    },
    #[error("malformed manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("invalid name or value `{0}`")]
    InvalidName(String),
}

/// In-memory archive: tensors in insertion order plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<(String, Tensor)>,
    meta: BTreeMap<String, String>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), CheckpointError> {
        let name = name.into();
        if !valid_token(&name) {
            return Err(CheckpointError::InvalidName(name));
        }
        if self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(CheckpointError::Duplicate(name));
        }
        self.tensors.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`get`](Self::get) but reports a missing entry as an error.
    pub fn tensor(&self, name: &str) -> crate::Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<(), CheckpointError> {
        let value = value.to_string();
        if !valid_token(key) {
            return Err(CheckpointError::InvalidName(key.to_string()));
        }
        if value.contains(['\n', '\r']) || value.trim() != value || value.is_empty() {
            return Err(CheckpointError::InvalidName(value));
        }
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses a meta value, reporting absence or a bad value.
    pub fn meta_parse<T: core::str::FromStr>(&self, key: &str) -> crate::Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::MissingTensor(format!("meta {key}")))?;
        raw.parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint meta {key} = `{raw}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let s = t.shape();
            let len = t.len() as u64 * 4;
            manifest.push_str(&format!(
                "tensor {name} f32 {}x{}x{}x{} {offset} {len}\n",
                s.n, s.c, s.h, s.w
            ));
            offset += len;
        }
        let mut out = Vec::with_capacity(PREAMBLE + manifest.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let truncated = |what: &str, needed: u64| CheckpointError::Truncated {
            what: what.to_string(),
            needed,
            available: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated("magic", 4));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        if bytes.len() < PREAMBLE {
            return Err(truncated("preamble", PREAMBLE as u64));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let payload_start = (PREAMBLE as u64).saturating_add(header_len);
        if payload_start > bytes.len() as u64 {
            return Err(truncated("manifest", payload_start));
        }
        let payload_start = payload_start as usize;
        let manifest = core::str::from_utf8(&bytes[PREAMBLE..payload_start]).map_err(|e| {
            CheckpointError::Malformed {
                line: 0,
                reason: format!("manifest is not UTF-8: {e}"),
            }
        })?;
        let payload = &bytes[payload_start..];

        let mut ck = Checkpoint::new();
        let mut expected_offset = 0u64;
        for (i, line) in manifest.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: &str| CheckpointError::Malformed {
                line: line_no,
                reason: reason.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| bad("missing fields"))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| bad("meta needs key and value"))?;
                    if ck.meta.contains_key(k) {
                        return Err(CheckpointError::Duplicate(k.to_string()));
                    }
                    ck.set_meta(k, v)?;
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let [name, dtype, dims, offset, len] = f[..] else {
                        return Err(bad("tensor needs name, dtype, shape, offset, length"));
                    };
                    if dtype != "f32" {
                        return Err(bad("unsupported element type"));
                    }
                    let dims: Vec<usize> = dims
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad("bad shape")))
                        .collect::<Result<_, _>>()?;
                    let [n, c, h, w] = dims[..] else {
                        return Err(bad("shape must have 4 extents"));
                    };
                    let offset: u64 = offset.parse().map_err(|_| bad("bad offset"))?;
                    let len: u64 = len.parse().map_err(|_| bad("bad length"))?;
                    let numel = (n as u64)
                        .checked_mul(c as u64)
                        .and_then(|v| v.checked_mul(h as u64))
                        .and_then(|v| v.checked_mul(w as u64))
                        .ok_or_else(|| bad("shape overflows"))?;
                    if numel == 0 || numel.checked_mul(4) != Some(len) {
                        return Err(bad("length disagrees with shape"));
                    }
                    if offset != expected_offset {
                        return Err(bad("tensor offsets must be contiguous in manifest order"));
                    }
                    let end = offset + len;
                    if end > payload.len() as u64 {
                        return Err(CheckpointError::Truncated {
                            what: format!("tensor {name}"),
                            needed: end,
                            available: payload.len() as u64,
                        });
                    }
                    expected_offset = end;
                    let data = payload[offset as usize..end as usize]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect();
                    let t = Tensor::from_vec(Shape::new(n, c, h, w), data)
                        .map_err(|_| bad("shape/data mismatch"))?;
                    ck.insert(name, t)?;
                }
                _ => return Err(bad("unknown record kind")),
            }
        }
        if expected_offset != payload.len() as u64 {
            return Err(CheckpointError::Malformed {
                line: 0,
                reason: format!(
                    "{} trailing payload bytes",
                    payload.len() as u64 - expected_offset
                ),
            });
        }
        Ok(ck)
    }
}
