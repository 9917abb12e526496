//! Weight file layout (all integers u32 little-endian, values f32 LE):
//!
//! ```text
//! 0   "ARFW"
//! 4   version = 1
//! 8   layer count L
//! 12  reserved = 0
//! 16  L × (rows, cols)
//! ..  per layer: rows·cols weights row-major, then rows biases
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::{CnnModel, Linear};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ARFW";
const VERSION: u32 = 1;

pub fn write_weights<W: Write>(model: &CnnModel, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    for v in [VERSION, model.layers.len() as u32, 0] {
        out.write_all(&v.to_le_bytes())?;
    }
    for l in &model.layers {
        out.write_all(&(l.w.nrows() as u32).to_le_bytes())?;
        out.write_all(&(l.w.ncols() as u32).to_le_bytes())?;
    }
    for l in &model.layers {
        let mut buf = Vec::with_capacity(4 * (l.w.len() + l.b.len()));
        for r in 0..l.w.nrows() {
            for c in 0..l.w.ncols() {
                buf.extend_from_slice(&(l.w[(r, c)] as f32).to_le_bytes());
            }
        }
        for v in l.b.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn u32_at(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn f32s(r: &mut dyn Read, n: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<CnnModel> {
    let r: &mut dyn Read = &mut input;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a weight file (bad magic)".into()));
    }
    let version = u32_at(r)?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported weight file version {version}")));
    }
    let n = u32_at(r)? as usize;
    let _reserved = u32_at(r)?;
    let dims: Vec<(usize, usize)> =
        (0..n).map(|_| Ok((u32_at(r)? as usize, u32_at(r)? as usize))).collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(n);
    for (m, k) in dims {
        let w = f32s(r, m * k)?;
        let b = f32s(r, m)?;
        layers.push(Linear { w: DMatrix::from_row_slice(m, k, &w), b: DVector::from_vec(b) });
    }
    let model = CnnModel { layers };
    model.validate()?;
    Ok(model)
}
