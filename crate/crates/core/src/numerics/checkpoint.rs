//! Binary checkpoint files.
//!
//! Layout: magic `AMDC`, u32 version = 1, u32 tensor count, then per tensor
//! a u16 name length, the UTF-8 name, u32 rows, u32 cols, and rows·cols
//! little-endian float32 values. Values are stored as f32 regardless of the
//! in-memory scalar type.

use std::fs;
use std::path::Path;

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AMDC";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(path: &Path, tensors: &[(&str, &Matrix<T>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Config(format!("tensor name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            buf.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Matrix<T>)>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.err_at(0, "expected magic AMDC"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err_here(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| r.err_here("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(T::from(r.f32("value")?).unwrap());
        }
        tensors.push((name, Matrix::new(rows, cols, data)?));
    }
    Ok(tensors)
}

/// Cursor over a byte buffer that reports the offset of any truncation.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn err_here(&self, reason: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason,
        }
    }

    pub fn err_at(&self, offset: u64, reason: &str) -> Error {
        Error::Format {
            offset,
            reason: reason.to_string(),
        }
    }
}
