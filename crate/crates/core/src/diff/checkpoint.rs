//! `RFW1` parameter checkpoints.
//!
//! Layout: the four magic bytes `RFW1`, then one record per parameter until end of
//! input: `u32` name length, UTF-8 name, `u32` rank, `rank` × `u32` extents, and the
//! payload as little-endian `f64`. All integers are little-endian.

use std::fs;
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RFW1";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint magic is not RFW1"));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut params = ParamSet::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?
            .to_owned();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let count: usize = shape.iter().product();
        let payload = r.take(count * 8, "payload")?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::format(format!("parameter `{name}`: {e}")))?;
        params.push(name, tensor);
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    decode(&fs::read(path)?)
}
