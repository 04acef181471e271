//! Versioned little-endian binary layout for network parameters.
//!
//! ```text
//! magic    "TLDRMLP\0"            8 bytes
//! version  u32                    currently 1
//! layers   u32
//! per layer: rows u32, cols u32, rows*cols f64 weights (row-major), cols f64 biases
//! adam m:  per layer weights then biases (same order and sizes)
//! adam v:  likewise
//! adam     step u64, lr f64, beta1 f64, beta2 f64, eps f64
//! ```
//!
//! Hidden layers are rectified and the last layer is linear, so activations
//! are implied by position.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{AdamState, Dense, DenseParams};
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 8] = b"TLDRMLP\0";
pub const NET_VERSION: u32 = 1;

/// Refuse absurd sizes from corrupt files before allocating.
const MAX_DIM: u32 = 1 << 16;

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn write_values<W: Write>(w: &mut W, a: &Array2<f64>) -> Result<()> {
    for v in a.iter() {
        write_f64(w, *v)?;
    }
    Ok(())
}

fn read_values<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn fill_like<R: Read>(r: &mut R, shape: &DenseParams) -> Result<DenseParams> {
    let mut out = shape.zeros_like();
    for t in out.tensors_mut() {
        let (rows, cols) = t.dim();
        *t = read_values(r, rows, cols)?;
    }
    Ok(out)
}

pub fn write_net<W: Write>(w: &mut W, params: &DenseParams, adam: &AdamState) -> Result<()> {
    if !params.same_shape(&adam.m) {
        return Err(Error::Shape("adam state does not match parameters".into()));
    }
    w.write_all(NET_MAGIC)?;
    write_u32(w, NET_VERSION)?;
    write_u32(w, params.layers.len() as u32)?;
    for l in &params.layers {
        write_u32(w, l.weight.nrows() as u32)?;
        write_u32(w, l.weight.ncols() as u32)?;
        write_values(w, &l.weight)?;
        write_values(w, &l.bias)?;
    }
    for t in adam.m.tensors().chain(adam.v.tensors()) {
        write_values(w, t)?;
    }
    write_u64(w, adam.step)?;
    for v in [adam.lr, adam.beta1, adam.beta2, adam.eps] {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R) -> Result<(DenseParams, AdamState)> {
    expect_magic(r, NET_MAGIC)?;
    let version = read_u32(r)?;
    if version != NET_VERSION {
        return Err(Error::Checkpoint(format!("unsupported network format version {version}")));
    }
    let n = read_u32(r)?;
    if n == 0 || n > MAX_DIM {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let mut layers = Vec::with_capacity(n as usize);
    for i in 0..n {
        let rows = read_u32(r)?;
        let cols = read_u32(r)?;
        if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
            return Err(Error::Checkpoint(format!("implausible layer shape {rows}x{cols}")));
        }
        let weight = read_values(r, rows as usize, cols as usize)?;
        let bias = read_values(r, 1, cols as usize)?;
        let activation = if i + 1 == n { super::Activation::Identity } else { super::Activation::Relu };
        layers.push(Dense { weight, bias, activation });
    }
    let params = DenseParams::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let m = fill_like(r, &params)?;
    let v = fill_like(r, &params)?;
    let step = read_u64(r)?;
    let lr = read_f64(r)?;
    let beta1 = read_f64(r)?;
    let beta2 = read_f64(r)?;
    let eps = read_f64(r)?;
    Ok((params, AdamState { m, v, step, lr, beta1, beta2, eps }))
}
