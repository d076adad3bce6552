//! Binary checkpoint container.
//!
//! Layout: magic `PPCK`, u32 version, u32 entry count, then per entry a u16
//! name length, the UTF-8 name, a u8 rank, `rank` u32 extents and the
//! little-endian f64 payload. A u64 FNV-1a checksum of every preceding
//! byte closes the file. Integers are little-endian.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PPCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::checkpoint(field, "file ends early"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, extents: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(extents.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.into(),
            extents,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Looks up `name`, failing with a checkpoint error naming it.
    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::checkpoint(name, "missing entry"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::checkpoint("count", "too many entries"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::checkpoint(&e.name, "name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let rank = u8::try_from(e.extents.len()).map_err(|_| Error::checkpoint(&e.name, "rank too large"))?;
            out.push(rank);
            for &x in &e.extents {
                let x = u32::try_from(x).map_err(|_| Error::checkpoint(&e.name, "extent too large"))?;
                out.extend_from_slice(&x.to_le_bytes());
            }
            if e.extents.iter().product::<usize>() != e.data.len() {
                return Err(Error::checkpoint(&e.name, "payload does not match extents"));
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 8 {
            return Err(Error::checkpoint("magic", "file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::checkpoint("magic", "not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(Error::checkpoint("checksum", "checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::checkpoint("version", format!("unsupported version {version}")));
        }
        let count = r.u32("count")?;
        let mut ck = Checkpoint::default();
        for i in 0..count {
            let field = format!("entry {i}");
            let len = r.u16(&field)? as usize;
            let name = std::str::from_utf8(r.take(len, &field)?)
                .map_err(|_| Error::checkpoint(&field, "name is not UTF-8"))?
                .to_string();
            let rank = r.u8(&name)? as usize;
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(r.u32(&name)? as usize);
            }
            let numel = extents
                .iter()
                .try_fold(1usize, |a, &b| a.checked_mul(b))
                .ok_or_else(|| Error::checkpoint(&name, "extents overflow"))?;
            let payload = r.take(
                numel
                    .checked_mul(8)
                    .ok_or_else(|| Error::checkpoint(&name, "extents overflow"))?,
                &name,
            )?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ck.push(name, extents, data);
        }
        if r.pos != body.len() {
            return Err(Error::checkpoint("count", "trailing bytes after the last entry"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
