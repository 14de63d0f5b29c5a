//! Little-endian framing shared by the checkpoint, database and dataset
//! array files: `magic | payload ... | crc64(magic + payload)`.

use std::fs;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};

use crate::error::{MrisError, Result};

const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    CHECKSUM.checksum(bytes)
}

#[derive(Debug, Default)]
pub(crate) struct FrameWriter {
    buf: Vec<u8>,
}

impl FrameWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(1024);
        buf.extend_from_slice(magic);
        FrameWriter { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// Length-prefixed (u32) UTF-8 string.
    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let sum = checksum(&self.buf);
        self.buf.extend_from_slice(&sum.to_le_bytes());
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<()> {
        let bytes = self.finish();
        fs::write(path, bytes).map_err(|e| MrisError::io(path, e))
    }
}

/// Cursor over a verified frame. Construction checks magic and checksum, so
/// nothing is handed to a parser before the whole file is known to be intact.
pub(crate) struct FrameReader {
    path: PathBuf,
    data: Vec<u8>,
    pos: usize,
    end: usize,
}

impl FrameReader {
    pub fn open(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let data = fs::read(path).map_err(|e| MrisError::io(path, e))?;
        Self::from_bytes(path, data, magic)
    }

    pub fn from_bytes(path: &Path, data: Vec<u8>, magic: &[u8; 4]) -> Result<Self> {
        if data.len() < 12 {
            return Err(MrisError::format(path, "truncated file"));
        }
        if &data[..4] != magic {
            return Err(MrisError::format(
                path,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&data[..4])
                ),
            ));
        }
        let end = data.len() - 8;
        let stored = u64::from_le_bytes(data[end..].try_into().unwrap());
        if checksum(&data[..end]) != stored {
            return Err(MrisError::format(path, "checksum mismatch"));
        }
        Ok(FrameReader {
            path: path.to_path_buf(),
            data,
            pos: 4,
            end,
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.end - self.pos < n {
            return Err(MrisError::format(&self.path, "truncated payload"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| MrisError::format(&self.path, "length overflow"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?.to_vec();
        String::from_utf8(raw).map_err(|_| MrisError::format(&self.path, "invalid utf-8 string"))
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let v = self.u32()?;
        if v != expected {
            return Err(MrisError::format(
                &self.path,
                format!("unsupported version {v} (expected {expected})"),
            ));
        }
        Ok(())
    }

    /// Errors if payload bytes remain unread.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.end {
            return Err(MrisError::format(
                &self.path,
                format!("{} trailing payload bytes", self.end - self.pos),
            ));
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
