//! `BROM` dataset files.
//!
//! Little-endian layout: magic `BROM`; `u32` version (= 1); `u32` M, K, T; `f64` l; `f64`
//! t_max; M Reynolds numbers; K x-coordinates; T times; then `M·T·K` values ordered
//! Reynolds-major, then time, then space. The dataset role is not stored.

use super::{DatasetRole, GridSpec, ParametricDataset, SolutionField};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"BROM";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(ds: &ParametricDataset) -> Vec<u8> {
    let grid = ds.grid();
    let [m, t, k] = ds.dims();
    let mut out = Vec::with_capacity(32 + 8 * (m + k + t + m * t * k));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, m as u32, k as u32, t as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    put(grid.length);
    put(grid.t_max);
    ds.fields().iter().for_each(|f| put(f.reynolds));
    grid.xs().into_iter().for_each(&mut put);
    grid.ts().into_iter().for_each(&mut put);
    for f in ds.fields() {
        f.values().iter().for_each(|&v| put(v));
    }
    out
}

pub fn read_dataset(bytes: &[u8]) -> Result<ParametricDataset> {
    if bytes.len() < 4 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format("dataset magic is not BROM"));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::format("dataset payload truncated"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [m, k, t] = dims;
    let mut f64s = |n: usize| -> Result<Vec<f64>> {
        Ok(take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let head = f64s(2)?;
    let grid = GridSpec::new(head[0], k, head[1], t).map_err(|e| Error::format(e.to_string()))?;
    let reynolds = f64s(m)?;
    let xs = f64s(k)?;
    let ts = f64s(t)?;
    if xs.iter().zip(grid.xs()).any(|(a, b)| a.to_bits() != b.to_bits())
        || ts.iter().zip(grid.ts()).any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::format("stored coordinates do not match a uniform grid"));
    }
    let mut fields = Vec::with_capacity(m);
    for &re in &reynolds {
        let values = f64s(t * k)?;
        fields.push(SolutionField::new(re, grid, values).map_err(|e| Error::format(e.to_string()))?);
    }
    if pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after dataset", bytes.len() - pos)));
    }
    ParametricDataset::new(DatasetRole::Unspecified, grid, fields).map_err(|e| Error::format(e.to_string()))
}
