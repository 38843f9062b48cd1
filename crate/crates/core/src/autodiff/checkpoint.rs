//! Parameter file: a versioned little-endian container of named tensors
//! with a JSON header for model metadata.
//!
//! ```text
//! magic   b"TCMPARAM"
//! version u32          (1)
//! width   u32          bytes per element (8 or 4)
//! hlen    u32, header  UTF-8 JSON
//! count   u32
//! count × { nlen u32, name, rank u32, dims u64 × rank, payload }
//! ```

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TCMPARAM";
pub const CHECKPOINT_VERSION: u32 = 1;
const WIDTH: u32 = std::mem::size_of::<Float>() as u32;

pub fn encode_checkpoint(store: &ParamStore, header: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&WIDTH.to_le_bytes());
    let header = serde_json::to_vec(header)?;
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, header: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(store, header)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Header plus `(name, tensor)` entries in file order.
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.u32()?;
    if width != WIDTH {
        return Err(Error::Checkpoint(format!(
            "element width {width} does not match this build ({WIDTH})"
        )));
    }
    let hlen = r.u32()? as usize;
    let header = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * WIDTH as usize)?;
        let data = raw
            .chunks_exact(WIDTH as usize)
            .map(|c| Float::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after last parameter".into(),
        ));
    }
    Ok(Checkpoint { header, entries })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
