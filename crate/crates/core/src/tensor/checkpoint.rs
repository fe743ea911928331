//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "E2V2"  u32 version  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u32 extent, f32 × numel }
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"E2V2";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::invalid(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::invalid(format!("rank too large: {}", t.name)))?;
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape("checkpoint", &t.shape, &[t.data.len()]));
            }
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(rank);
            for &d in &t.shape {
                let d = u32::try_from(d).map_err(|_| Error::invalid("extent exceeds u32"))?;
                buf.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected \"E2V2\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, 4, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, at as u64, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, r.pos as u64, "trailing bytes after last tensor"));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, self.pos as u64, "unexpected end of file"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
