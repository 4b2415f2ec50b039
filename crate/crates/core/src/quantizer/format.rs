//! QEMB embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "QEMB"   4 bytes
//! version u16      currently 1
//! dtype   u8       0 = int8, 1 = binary (bit-packed)
//! dim     u32
//! count   u64
//! payload          count rows, row-major
//! ```
//!
//! INT8 rows are `dim` signed bytes. Binary rows are `ceil(dim / 8)` bytes,
//! entry `j` in bit `j % 8` of byte `j / 8` (LSB first), `+1` stored as 1.
//! Padding bits are written as zero.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{BinaryEmbedding, QuantizedEmbedding};

pub const QEMB_MAGIC: &[u8; 4] = b"QEMB";
pub const QEMB_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QembDtype {
    Int8,
    Binary,
}

impl QembDtype {
    pub fn code(self) -> u8 {
        match self {
            QembDtype::Int8 => 0,
            QembDtype::Binary => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(QembDtype::Int8),
            1 => Ok(QembDtype::Binary),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn row_bytes(self, dim: usize) -> usize {
        match self {
            QembDtype::Int8 => dim,
            QembDtype::Binary => dim.div_ceil(8),
        }
    }
}

impl std::str::FromStr for QembDtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(QembDtype::Int8),
            "binary" | "bin" => Ok(QembDtype::Binary),
            other => Err(Error::InvalidArgument(format!("unknown dtype {other:?}"))),
        }
    }
}

/// Decoded contents of a QEMB file.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingFile {
    Int8 { dim: usize, rows: Vec<QuantizedEmbedding> },
    Binary { dim: usize, rows: Vec<BinaryEmbedding> },
}

impl EmbeddingFile {
    pub fn dtype(&self) -> QembDtype {
        match self {
            EmbeddingFile::Int8 { .. } => QembDtype::Int8,
            EmbeddingFile::Binary { .. } => QembDtype::Binary,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingFile::Int8 { dim, .. } | EmbeddingFile::Binary { dim, .. } => *dim,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EmbeddingFile::Int8 { rows, .. } => rows.len(),
            EmbeddingFile::Binary { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dim = self.dim();
        let dtype = self.dtype();
        let dim32 = u32::try_from(dim).map_err(|_| Error::Format(format!("dimension {dim} exceeds u32")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * dtype.row_bytes(dim));
        out.extend_from_slice(QEMB_MAGIC);
        out.extend_from_slice(&QEMB_VERSION.to_le_bytes());
        out.push(dtype.code());
        out.extend_from_slice(&dim32.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        match self {
            EmbeddingFile::Int8 { rows, .. } => {
                for r in rows {
                    check_dim(dim, r.dim())?;
                    out.extend(r.values().iter().map(|&v| v as u8));
                }
            }
            EmbeddingFile::Binary { rows, .. } => {
                for r in rows {
                    check_dim(dim, r.dim())?;
                    out.extend_from_slice(&r.to_packed_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != QEMB_MAGIC {
            return Err(Error::Format("bad magic, expected QEMB".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != QEMB_VERSION {
            return Err(Error::Format(format!("unsupported QEMB version {version}")));
        }
        let dtype = QembDtype::from_code(bytes[6])?;
        let dim = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("dimension 0".into()));
        }
        let row = dtype.row_bytes(dim);
        let expected = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(row))
            .ok_or_else(|| Error::Format(format!("row count {count} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        Ok(match dtype {
            QembDtype::Int8 => EmbeddingFile::Int8 {
                dim,
                rows: payload
                    .chunks_exact(row)
                    .map(|c| QuantizedEmbedding::new(c.iter().map(|&b| b as i8).collect()))
                    .collect::<Result<_>>()?,
            },
            QembDtype::Binary => EmbeddingFile::Binary {
                dim,
                rows: payload
                    .chunks_exact(row)
                    .map(|c| BinaryEmbedding::from_packed_bytes(c, dim))
                    .collect::<Result<_>>()?,
            },
        })
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn write_qemb(path: &Path, file: &EmbeddingFile) -> Result<()> {
    let bytes = file.encode()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_qemb(path: &Path) -> Result<EmbeddingFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    EmbeddingFile::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let f = EmbeddingFile::Int8 {
            dim: 2,
            rows: vec![QuantizedEmbedding::new(vec![-1, 127]).unwrap()],
        };
        let bytes = f.encode().unwrap();
        assert_eq!(
            bytes,
            [b'Q', b'E', b'M', b'B', 1, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0xff, 0x7f]
        );
    }

    #[test]
    fn binary_payload_is_lsb_first() {
        let f = EmbeddingFile::Binary {
            dim: 10,
            rows: vec![BinaryEmbedding::from_signs(&[1, -1, -1, -1, -1, -1, -1, -1, 1, 1]).unwrap()],
        };
        let bytes = f.encode().unwrap();
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[HEADER_LEN..], &[0b0000_0001, 0b0000_0011]);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let f = EmbeddingFile::Int8 {
            dim: 3,
            rows: vec![QuantizedEmbedding::new(vec![1, 2, 3]).unwrap()],
        };
        let mut bytes = f.encode().unwrap();
        bytes.pop();
        assert!(matches!(EmbeddingFile::decode(&bytes), Err(Error::Format(_))));
        let mut bytes = f.encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingFile::decode(&bytes), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(dim in 1usize..40, rows in 0usize..6, seed in any::<u64>(), binary in any::<bool>()) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) as i64 };
            let file = if binary {
                EmbeddingFile::Binary { dim, rows: (0..rows).map(|_| {
                    let signs: Vec<i8> = (0..dim).map(|_| if next() % 2 == 0 { 1 } else { -1 }).collect();
                    BinaryEmbedding::from_signs(&signs).unwrap()
                }).collect() }
            } else {
                EmbeddingFile::Int8 { dim, rows: (0..rows).map(|_| {
                    QuantizedEmbedding::new((0..dim).map(|_| (next() % 255 - 127) as i8).collect()).unwrap()
                }).collect() }
            };
            let decoded = EmbeddingFile::decode(&file.encode().unwrap()).unwrap();
            prop_assert_eq!(decoded, file);
        }
    }
}
