//! On-disk formats and reports.
//!
//! Binary containers are little-endian with fully specified layouts so
//! round-trips are bit-exact. All writes go through a temp-file-plus-rename
//! so a failed run never leaves a half-written artifact.

mod checkpoint;
mod dataset;
mod export;
mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use dataset::{load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use export::export_graph;
pub use report::{
    compare_csv, confusion_csv, history_csv, metrics_json, sweep_csv,
};

use std::io::Read;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

/// Writes `bytes` atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Byte reader tracking its offset for precise truncation reports.
pub(crate) struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    pub(crate) fn read_exact(&mut self, buf: &mut [u8], context: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Err(FormatError::Truncated { offset: self.offset, context: context.to_string() }
                    .into())
            }
            Err(e) => Err(Error::Io(e)),
        }
    }

    pub(crate) fn read_u32(&mut self, context: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, context)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn read_u64(&mut self, context: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, context)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn read_f64(&mut self, context: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, context)?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn read_f64_vec(&mut self, n: usize, context: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.read_exact(&mut bytes, context)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn read_u16_vec(&mut self, n: usize, context: &str) -> Result<Vec<u16>> {
        let mut bytes = vec![0u8; n * 2];
        self.read_exact(&mut bytes, context)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn read_string(&mut self, context: &str) -> Result<String> {
        let len = self.read_u32(context)? as usize;
        if len > 1 << 24 {
            return Err(FormatError::Corrupt {
                offset: self.offset,
                context: format!("{context}: string length {len} is implausible"),
            }
            .into());
        }
        let mut bytes = vec![0u8; len];
        self.read_exact(&mut bytes, context)?;
        String::from_utf8(bytes).map_err(|_| {
            FormatError::Corrupt { offset: self.offset, context: format!("{context}: invalid utf-8") }
                .into()
        })
    }

    pub(crate) fn corrupt(&self, context: impl Into<String>) -> Error {
        FormatError::Corrupt { offset: self.offset, context: context.into() }.into()
    }
}

pub(crate) fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64_slice(buf: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        push_f64(buf, v);
    }
}

pub(crate) fn push_string(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_packing_round_trips() {
        let bits: Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        assert_eq!(unpack_bits(&pack_bits(&bits), 37), bits);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        atomic_write(&path, b"payload").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"payload");
        assert!(!path.with_extension("tmp").exists());
    }
}
