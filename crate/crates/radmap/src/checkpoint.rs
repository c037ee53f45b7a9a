//! RMCK tensor archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RMCK"  u32 version (1)  u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 ndim, ndim × u64 dims,
//!             product(dims) × f32 payload
//! ```

use std::path::Path;

use radmap_core::Tensor;

use crate::error::{self, Error, Result};

pub const MAGIC: [u8; 4] = *b"RMCK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not an RMCK file (magic {0:02x?})")]
    Magic([u8; 4]),
    #[error("unsupported RMCK version {0}")]
    Version(u32),
    #[error("truncated: {what} needs {needed} bytes at offset {offset}, file has {len}")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error("tensor {index}: {msg}")]
    Tensor { index: usize, msg: String },
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Entry = (String, Tensor);

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::with_capacity(HEADER_LEN + entries.iter().map(|(n, t)| 11 + n.len() + 4 * t.len()).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| CheckpointError::Tensor {
        index: u32::MAX as usize,
        msg: "too many tensors".into(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for (index, (name, t)) in entries.iter().enumerate() {
        let bad = |msg: &str| CheckpointError::Tensor {
            index,
            msg: format!("'{name}': {msg}"),
        };
        let len = u16::try_from(name.len()).map_err(|_| bad("name longer than 65535 bytes"))?;
        let ndim = u8::try_from(t.shape().len()).map_err(|_| bad("more than 255 dimensions"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::Magic(magic));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| CheckpointError::Tensor {
                index,
                msg: "name is not UTF-8".into(),
            })?
            .to_string();
        let ndim = c.take(1, "dimension count")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(c.take(8, "dimension")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| CheckpointError::Tensor {
                index,
                msg: format!("'{name}': dimension {d} too large"),
            })?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let Some((n, nbytes)) = n else {
            return Err(CheckpointError::Tensor {
                index,
                msg: format!("'{name}': shape {shape:?} overflows"),
            });
        };
        let payload = c.take(nbytes, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        debug_assert_eq!(data.len(), n);
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Tensor {
            index,
            msg: format!("'{name}': {e}"),
        })?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - c.pos));
    }
    Ok(out)
}

pub fn save(entries: &[Entry], path: &Path) -> Result<()> {
    error::write(path, &encode(entries)?)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    decode(&error::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_archive_is_twelve_bytes() {
        let b = encode(&[]).unwrap();
        assert_eq!(b, [b'R', b'M', b'C', b'K', 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode(&b).unwrap(), vec![]);
    }

    #[test]
    fn two_by_two_layout() {
        let t = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = encode(&[("w".into(), t.clone())]).unwrap();
        let mut expect = b"RMCK".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'w');
        expect.push(2);
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        for v in [1.0f32, -2.0, 0.5, 3.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(b, expect);
        assert_eq!(decode(&b).unwrap(), vec![("w".to_string(), t)]);
    }

    #[test]
    fn corrupt_magic_version_and_length() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = encode(&[("a".into(), t)]).unwrap();
        let mut m = good.clone();
        m[0] = b'X';
        assert!(matches!(decode(&m), Err(CheckpointError::Magic(_))));
        let mut v = good.clone();
        v[4] = 2;
        assert_eq!(decode(&v), Err(CheckpointError::Version(2)));
        assert!(matches!(decode(&good[..good.len() - 1]), Err(CheckpointError::Truncated { what: "payload", .. })));
        let mut long = good.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(CheckpointError::Trailing(1)));
    }
}
