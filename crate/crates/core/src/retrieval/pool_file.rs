//! Binary candidate-pool format, little-endian:
//!
//! ```text
//! magic "VLFE" | version u32 | dim u32 | count u32
//! per entry: id_len u16, id utf8, desc_len u16, desc utf8, dim × f32
//! ```

use std::fs;
use std::path::Path;

use super::{Embedding, GoalPool, GoalPoolEntry, RetrievalError, POOL_NORM_TOLERANCE};

pub const POOL_MAGIC: [u8; 4] = *b"VLFE";
pub const POOL_VERSION: u32 = 1;

fn encode_str(buf: &mut Vec<u8>, s: &str) -> Result<(), RetrievalError> {
    let len = u16::try_from(s.len()).map_err(|_| RetrievalError::StringTooLong(s.to_string()))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_pool(pool: &GoalPool) -> Result<Vec<u8>, RetrievalError> {
    let mut buf = Vec::with_capacity(16 + pool.len() * (pool.dim * 4 + 32));
    buf.extend_from_slice(&POOL_MAGIC);
    buf.extend_from_slice(&POOL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(pool.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(pool.len() as u32).to_le_bytes());
    for e in &pool.entries {
        if e.embedding.dim() != pool.dim {
            return Err(RetrievalError::DimMismatch {
                expected: pool.dim,
                found: e.embedding.dim(),
            });
        }
        encode_str(&mut buf, &e.id)?;
        encode_str(&mut buf, &e.descriptor)?;
        for v in e.embedding.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_pool(pool: &GoalPool, path: &Path) -> Result<(), RetrievalError> {
    fs::write(path, encode_pool(pool)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], RetrievalError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| RetrievalError::Truncated {
            context: context.to_string(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, context: &str) -> Result<u16, RetrievalError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: &str) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn string(&mut self, context: &str) -> Result<String, RetrievalError> {
        let len = self.u16(context)? as usize;
        let raw = self.take(len, context)?;
        String::from_utf8(raw.to_vec()).map_err(|_| RetrievalError::InvalidUtf8)
    }
}

pub fn decode_pool(bytes: &[u8]) -> Result<GoalPool, RetrievalError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != POOL_MAGIC {
        return Err(RetrievalError::BadMagic { found: magic });
    }
    let version = cur.u32("version")?;
    if version != POOL_VERSION {
        return Err(RetrievalError::VersionUnsupported(version));
    }
    let dim = cur.u32("dim")? as usize;
    let count = cur.u32("count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let id = cur.string(&format!("entry {i} id"))?;
        let descriptor = cur.string(&format!("entry {i} descriptor"))?;
        let raw = cur.take(dim * 4, &format!("entry {i} values"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite { id });
        }
        let embedding = Embedding::from_raw(values);
        let norm = embedding.norm();
        if (norm - 1.0).abs() > POOL_NORM_TOLERANCE {
            return Err(RetrievalError::NormViolation { id, norm });
        }
        entries.push(GoalPoolEntry {
            id,
            descriptor,
            embedding,
            goal_link: None,
        });
    }
    GoalPool::new(dim, entries)
}

pub fn read_pool(path: &Path) -> Result<GoalPool, RetrievalError> {
    decode_pool(&fs::read(path)?)
}
