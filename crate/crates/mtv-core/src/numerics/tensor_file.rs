//! Binary tensor files.
//!
//! Layout, all little-endian: the 4-byte magic `MTVT`, a u32 rank, one u32
//! extent per axis, then the row-major payload as f32. Arrays are held in
//! memory as f64 and rounded to f32 on write; reading widens back losslessly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::array::DenseArray;

pub const MAGIC: &[u8; 4] = b"MTVT";

pub fn write_tensor(path: &Path, array: &DenseArray) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * array.rank() + 4 * array.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(array.rank() as u32).to_le_bytes());
    for &extent in array.shape() {
        bytes.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &v in array.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<DenseArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::format(path, msg);

    if bytes.len() < 8 {
        return Err(fail(format!("file too short for header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rank == 0 {
        return Err(fail("rank 0 is not a valid tensor".into()));
    }
    let header_len = 8 + 4 * rank;
    if bytes.len() < header_len {
        return Err(fail(format!(
            "header truncated: rank {rank} needs {header_len} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for axis in 0..rank {
        let off = 8 + 4 * axis;
        let extent = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if extent == 0 {
            return Err(fail(format!("axis {axis} has extent 0")));
        }
        shape.push(extent);
    }
    let numel: usize = shape.iter().product();
    let expected = header_len + 4 * numel;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload length mismatch: shape {shape:?} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DenseArray::new(shape, data)
}
