//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "ELFT"
//! version    u16      1
//! dtype      u8       0 = f32, 1 = f64
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims (rank × u32)
//!   data     product(dims) elements, little-endian
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ELFT";
pub const VERSION: u16 = 1;

pub type NamedTensors<T> = Vec<(String, Tensor<T>)>;

pub fn encode<T: Element>(tensors: &[(String, Tensor<T>)]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|(_, t)| t.numel() * T::DTYPE.size_of()).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.tag());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.extend_le_bytes(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                TensorError::Format(format!(
                    "truncated while reading {what} at byte {} (need {n}, have {})",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads the dtype recorded in an encoded checkpoint header.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(TensorError::Format("missing ELFT magic".into()));
    }
    DType::from_tag(bytes[6]).ok_or_else(|| TensorError::Format(format!("unknown dtype tag {}", bytes[6])))
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<NamedTensors<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(TensorError::Format("missing ELFT magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let tag = c.take(1, "dtype")?[0];
    let dtype = DType::from_tag(tag).ok_or_else(|| TensorError::Format(format!("unknown dtype tag {tag}")))?;
    if dtype != T::DTYPE {
        return Err(TensorError::Format(format!(
            "file holds {dtype} tensors, requested {}",
            T::DTYPE
        )));
    }
    let count = c.u32("tensor count")? as usize;
    let esize = dtype.size_of();
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|e| TensorError::Format(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = c.take(numel * esize, "tensor data")?;
        let data = raw.chunks_exact(esize).map(T::from_le_slice).collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

pub fn write_to<T: Element, W: Write>(w: &mut W, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    w.write_all(&encode(tensors))?;
    Ok(())
}

pub fn read_from<T: Element, R: Read>(r: &mut R) -> Result<NamedTensors<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save<T: Element>(path: impl AsRef<Path>, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    std::fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<NamedTensors<T>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_slice(&[2], &[1.0, -2.0]).unwrap();
        let bytes = encode(&[("w".to_string(), t)]);
        assert_eq!(&bytes[..4], b"ELFT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 0);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 1);
        // name_len(4) + "w"(1) + rank(4) + dim(4) + 2×f32(8)
        assert_eq!(bytes.len(), 11 + 4 + 1 + 4 + 4 + 8);
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f64>::ones(&[3, 2]);
        let mut bytes = encode(&[("a".to_string(), t)]);
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode::<f32>(&bytes).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode::<f64>(&bytes), Err(TensorError::Format(_))));
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::<f64>::scalar(std::f64::consts::PI);
        let back = decode::<f64>(&encode(&[("pi".to_string(), t.clone())])).unwrap();
        assert_eq!(back[0].0, "pi");
        assert!(back[0].1.bit_eq(&t));
    }
}
