//! Flat little-endian matrix files.
//!
//! Layout: 16-byte header (`magic: [u8; 4]`, `version: u32`, `rows: u32`,
//! `cols: u32`) followed by `rows * cols` little-endian `f32` values in
//! row-major order. Used for cached corpus features and for Mel payloads.

use std::path::Path;

use crate::{Error, Result};

pub const MEL_MAGIC: [u8; 4] = *b"PMEL";
pub const FEATURE_MAGIC: [u8; 4] = *b"PFEA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            rows,
            cols,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode(magic: [u8; 4], m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: [u8; 4], bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[0..4] != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[0..4]),
            String::from_utf8_lossy(&magic)
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 4 {
        return Err(format!(
            "payload has {} bytes, header says {rows}x{cols}",
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix { rows, cols, data })
}

pub fn write(path: &Path, magic: [u8; 4], m: &Matrix) -> Result<()> {
    std::fs::write(path, encode(magic, m)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, magic: [u8; 4]) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes).map_err(|m| Error::format(path, m))
}
