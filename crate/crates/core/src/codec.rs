//! Little-endian binary framing shared by the persisted artifacts.
//!
//! Every file is `magic (4 bytes) | version u32 | payload | crc32 u32`, where
//! the checksum covers everything before it.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: corrupt file: {reason}")]
    CorruptFile { path: String, reason: String },
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }

    pub fn write_to(self, path: &Path) -> Result<(), PersistError> {
        let bytes = self.finish();
        fs::write(path, bytes).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    /// Checks magic, checksum and version, and positions after the header.
    pub fn open(
        data: &'a [u8],
        magic: &[u8; 4],
        version: u32,
        path: &str,
    ) -> Result<Self, PersistError> {
        let corrupt = |reason: &str| PersistError::CorruptFile {
            path: path.to_string(),
            reason: reason.to_string(),
        };
        if data.len() < 12 {
            return Err(corrupt("file too short"));
        }
        if &data[..4] != magic {
            return Err(corrupt("bad magic"));
        }
        let body = &data[..data.len() - 4];
        let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().expect("4 bytes"));
        let found = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            // A clean header from another version is reported as such even
            // though its checksum layout may differ.
            if found != version {
                return Err(PersistError::VersionMismatch {
                    path: path.to_string(),
                    found,
                    expected: version,
                });
            }
            return Err(corrupt("checksum mismatch"));
        }
        if found != version {
            return Err(PersistError::VersionMismatch {
                path: path.to_string(),
                found,
                expected: version,
            });
        }
        Ok(Self {
            data: body,
            pos: 8,
            path: path.to_string(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.data.len() {
            return Err(self.corrupt("unexpected end of data"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn corrupt(&self, reason: &str) -> PersistError {
        PersistError::CorruptFile {
            path: self.path.clone(),
            reason: reason.to_string(),
        }
    }

    pub fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self) -> Result<f32, PersistError> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], PersistError> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    /// Length prefix checked against the remaining data, so a corrupt count
    /// cannot trigger a huge allocation.
    pub fn count(&mut self, item_size: usize) -> Result<usize, PersistError> {
        let n = self.u64()? as usize;
        if n.saturating_mul(item_size.max(1)) > self.data.len() - self.pos {
            return Err(self.corrupt("length prefix exceeds file size"));
        }
        Ok(n)
    }

    pub fn finish(self) -> Result<(), PersistError> {
        if self.pos != self.data.len() {
            return Err(self.corrupt("trailing data"));
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, PersistError> {
    fs::read(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_failures() {
        let mut w = Writer::new(b"TEST", 3);
        w.u32(7);
        w.f64(-1.5);
        w.bytes(b"abc");
        let data = w.finish();
        let mut r = Reader::open(&data, b"TEST", 3, "t").unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), -1.5);
        assert_eq!(r.bytes().unwrap(), b"abc");
        r.finish().unwrap();

        assert!(matches!(
            Reader::open(&data[..data.len() - 3], b"TEST", 3, "t"),
            Err(PersistError::CorruptFile { .. })
        ));
        let mut flipped = data.clone();
        flipped[9] ^= 1;
        assert!(matches!(
            Reader::open(&flipped, b"TEST", 3, "t"),
            Err(PersistError::CorruptFile { .. })
        ));
        match Reader::open(&data, b"TEST", 4, "t") {
            Err(PersistError::VersionMismatch {
                found: 3,
                expected: 4,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }
}
