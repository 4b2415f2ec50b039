//! QCKP checkpoint files.
//!
//! ```text
//! magic    "QCKP"                4 bytes
//! version  u16                   currently 1
//! tensors  u32
//! per tensor:
//!   name_len u16, name (UTF-8)
//!   ndim     u8,  dims u64 * ndim
//!   offset   u64  byte offset of the tensor within the payload
//! payload  little-endian f32, tensors back to back in table order
//! ```
//!
//! All integers are little-endian. Values are stored as f32 and widened to
//! f64 on load.

use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamVector, TensorSpec};

pub const QCKP_MAGIC: &[u8; 4] = b"QCKP";
pub const QCKP_VERSION: u16 = 1;

pub fn encode_checkpoint(params: &ParamVector) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(QCKP_MAGIC);
    out.extend_from_slice(&QCKP_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layout().len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in params.layout() {
        let name = t.name.as_bytes();
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name {:?} too long", t.name)))?;
        let ndim = u8::try_from(t.shape.len())
            .map_err(|_| Error::Format(format!("tensor {:?} has too many dimensions", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(ndim);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    for &v in params.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamVector> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != QCKP_MAGIC {
        return Err(Error::Format("bad magic, expected QCKP".into()));
    }
    let version = c.u16()?;
    if version != QCKP_VERSION {
        return Err(Error::Format(format!("unsupported QCKP version {version}")));
    }
    let count = c.u32()?;
    let mut layout = Vec::new();
    let mut expected_offset = 0u64;
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u8()?;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = c.u64()?;
        if offset != expected_offset {
            return Err(Error::Format(format!(
                "tensor {name:?} at offset {offset}, expected {expected_offset}"
            )));
        }
        let spec = TensorSpec { name, shape };
        expected_offset += 4 * spec.numel() as u64;
        layout.push(spec);
    }
    let payload = &bytes[c.pos..];
    if payload.len() as u64 != expected_offset {
        return Err(Error::Format(format!(
            "payload is {} bytes, table implies {expected_offset}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    ParamVector::new(values, layout)
}

pub fn write_checkpoint(path: &Path, params: &ParamVector) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_exact_for_f32_values() {
        let p = ParamVector::new(
            vec![0.5, -1.25, 3.0, 0.0, 7.75, -0.125],
            vec![TensorSpec::new("table", vec![2, 2]), TensorSpec::new("proj", vec![2])],
        )
        .unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        assert_eq!(&bytes[..4], b"QCKP");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let p = ParamVector::flat(vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_checkpoint(&p).unwrap();
        bytes.pop();
        assert!(decode_checkpoint(&bytes).is_err());
        let mut bytes = encode_checkpoint(&p).unwrap();
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
