//! Embedding archives.
//!
//! ```text
//! "EMB1"  u32 count  u32 dim
//! count × { u16 name_len, name (UTF-8), dim × f32 }
//! ```
//! All integers and floats little-endian.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Embedding;

pub const MAGIC: &[u8; 4] = b"EMB1";

pub fn encode_archive(embeddings: &[Embedding]) -> Result<Vec<u8>> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut b = Vec::with_capacity(12 + embeddings.len() * (dim * 4 + 16));
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&(embeddings.len() as u32).to_le_bytes());
    b.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::shape("embedding archive", &[dim], &[e.vector.len()]));
        }
        let name = e.utterance_id.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("utterance id too long: {}", e.utterance_id)))?;
        b.extend_from_slice(&len.to_le_bytes());
        b.extend_from_slice(name);
        for v in &e.vector {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(b)
}

pub fn decode_archive(b: &[u8], path: &Path) -> Result<Vec<Embedding>> {
    let bad = |offset: usize, reason: &str| Error::format(path, offset as u64, reason);
    let take = |pos: usize, n: usize| -> Result<&[u8]> {
        b.get(pos..pos + n).ok_or_else(|| bad(pos, "archive truncated"))
    };
    if take(0, 4)? != MAGIC {
        return Err(bad(0, "bad magic, expected EMB1"));
    }
    let u32_at = |pos: usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().expect("4 bytes")) as usize)
    };
    let count = u32_at(4)?;
    let dim = u32_at(8)?;
    let mut pos = 12;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u16::from_le_bytes(take(pos, 2)?.try_into().expect("2 bytes")) as usize;
        pos += 2;
        let name = std::str::from_utf8(take(pos, len)?).map_err(|_| bad(pos, "name is not UTF-8"))?;
        pos += len;
        let raw = take(pos, dim * 4)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        pos += dim * 4;
        out.push(Embedding {
            utterance_id: name.to_string(),
            vector,
        });
    }
    if pos != b.len() {
        return Err(bad(pos, "trailing bytes after last record"));
    }
    Ok(out)
}

pub fn write_archive(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    std::fs::write(path, encode_archive(embeddings)?).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<Embedding>> {
    let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&b, path)
}

/// Lookup by utterance id; later duplicates override earlier ones.
pub fn index(embeddings: &[Embedding]) -> HashMap<&str, &[f32]> {
    embeddings
        .iter()
        .map(|e| (e.utterance_id.as_str(), e.vector.as_slice()))
        .collect()
}
