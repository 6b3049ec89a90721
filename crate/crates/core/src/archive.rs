//! Versioned named-tensor archive, shared by weight files, checkpoints and
//! feature dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "SFDARCH\0"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       JSON      {"kind", "meta", "tensors": [{"name", "shape"}]}
//! payload      f64 LE    tensors in header order, row-major
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! The checksum is verified before anything is parsed, so a truncated or
//! corrupted file never yields partial state.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sfd_autograd::Tensor;

use crate::error::{Result, SfdError};

pub const MAGIC: &[u8; 8] = b"SFDARCH\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("archive header serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + payload + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.as_standard_layout().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let min = MAGIC.len() + 4 + 8 + CHECKSUM_LEN;
        if bytes.len() < min {
            return Err(SfdError::Checksum(format!(
                "file is {} bytes, shorter than the minimum {min}",
                bytes.len()
            )));
        }
        let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != stored {
            return Err(SfdError::Checksum(
                "SHA-256 mismatch (truncated or corrupted file)".into(),
            ));
        }
        if &body[..8] != MAGIC {
            return Err(SfdError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(SfdError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| SfdError::Format("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| SfdError::Format(format!("header: {e}")))?;
        let mut offset = header_end;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset + n * 8;
            if end > body.len() {
                return Err(SfdError::Format(format!("payload too short for `{}`", entry.name)));
            }
            let values = body[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((
                entry.name,
                ArrayD::from_shape_vec(IxDyn(&entry.shape), values).unwrap(),
            ));
            offset = end;
        }
        if offset != body.len() {
            return Err(SfdError::Format("trailing bytes after payload".into()));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp).map_err(|e| SfdError::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| SfdError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| SfdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SfdError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Archive {
        let mut a = Archive::new("test", serde_json::json!({"step": 3}));
        a.push("a", ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap());
        a.push("scalar", ArrayD::from_elem(IxDyn(&[]), 7.0));
        a
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = sample().to_bytes();
        for cut in [1, 8, 40, bytes.len() - 1] {
            let err = Archive::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, SfdError::Checksum(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let mut bytes = sample().to_bytes();
        bytes[30] ^= 0x40;
        assert!(matches!(Archive::from_bytes(&bytes), Err(SfdError::Checksum(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let body_len = bytes.len() - CHECKSUM_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(digest.as_slice());
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(SfdError::Version { found: 9, expected: 1 })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::ANY, 0..64), rows in 1usize..4) {
            let n = values.len() / rows * rows;
            let t = ArrayD::from_shape_vec(IxDyn(&[rows, n / rows]), values[..n].to_vec()).unwrap();
            let mut a = Archive::new("p", serde_json::Value::Null);
            a.push("t", t.clone());
            let back = Archive::from_bytes(&a.to_bytes()).unwrap();
            let got = back.get("t").unwrap();
            prop_assert_eq!(got.shape(), t.shape());
            for (x, y) in got.iter().zip(t.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
