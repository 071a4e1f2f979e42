//! Binary container for named tensors.
//!
//! Layout: magic `TRYT`, `u32` LE format version, `u32` LE header length,
//! a JSON header `{"tensors":[{"name","shape"}]}`, then every tensor's
//! values as little-endian `f32` in header order with nothing trailing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TRYT";
const VERSION: u32 = 1;
/// Refuses headers or tensors beyond this many elements.
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("not a tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported tensor file version {0}")]
    Version(u32),
    #[error("truncated tensor file: {0}")]
    Truncated(&'static str),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("payload holds {found} bytes, header describes {expected}")]
    PayloadSize { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<Entry>,
}

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let header = Header {
        tensors: items
            .iter()
            .map(|(n, t)| Entry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + items.iter().map(|(_, t)| t.numel() * 4).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in items {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, TensorFileError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(TensorFileError::Truncated("preamble"))
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, TensorFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(TensorFileError::Version(version));
    }
    let hlen = read_u32(bytes, 8)? as usize;
    let body = &bytes[12..];
    if hlen > body.len() {
        return Err(TensorFileError::Truncated("header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| TensorFileError::Header(e.to_string()))?;
    let payload = &body[hlen..];
    let mut expected = 0usize;
    let mut sizes = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| TensorFileError::Header(format!("tensor {} is too large", e.name)))?;
        expected = expected
            .checked_add(n)
            .filter(|&t| t <= MAX_ELEMENTS)
            .ok_or_else(|| TensorFileError::Header("total size too large".into()))?;
        sizes.push(n);
    }
    if payload.len() != expected * 4 {
        return Err(TensorFileError::PayloadSize {
            expected: expected * 4,
            found: payload.len(),
        });
    }
    let mut names = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for (e, n) in header.tensors.into_iter().zip(sizes) {
        if !names.insert(e.name.clone()) {
            return Err(TensorFileError::Header(format!("duplicate tensor {}", e.name)));
        }
        let data: Vec<f32> = payload[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += n * 4;
        out.push((e.name, Tensor::new(&e.shape, data)));
    }
    Ok(out)
}

pub fn save(path: &std::path::Path, store: &crate::nn::ParamStore) -> Result<(), TensorFileError> {
    std::fs::write(path, encode(store.iter()))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Vec<(String, Tensor)>, TensorFileError> {
    decode(&std::fs::read(path)?)
}
