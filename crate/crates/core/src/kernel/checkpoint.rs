//! Versioned parameter blobs.
//!
//! ```text
//! "SNNW" | u16 version | u32 tensor_count
//! | per tensor: u16 name_len | name (UTF-8) | u8 dtype | u8 rank | u32 dims[rank] | data
//! ```
//! All integers are little-endian. `dtype` 0 is `f32`, 1 is `f64`; data is
//! little-endian in that type. Writers always emit `f64`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNNW";
pub const CHECKPOINT_VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub fn write_checkpoint(entries: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed(format!("checkpoint truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Malformed("not a parameter checkpoint".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Malformed(format!("checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = usize::from(r.u16()?);
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = usize::from(r.u8()?);
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(Error::Malformed(format!("unknown dtype {other}"))),
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.at != bytes.len() {
        return Err(Error::Malformed("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ParamStore;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut rng = crate::rng::rng(1);
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::randn(&[3, 4], 1.0, &mut rng));
        store.add("b", Tensor::scalar(f64::MIN_POSITIVE));
        let bytes = store.to_checkpoint();
        let mut other = store.clone();
        other.tensors_mut()[0] = Tensor::zeros(&[3, 4]);
        other.load_checkpoint(&bytes).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn reads_f32_payloads() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SNNW");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'w');
        bytes.push(0);
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let out = read_checkpoint(&bytes).unwrap();
        assert_eq!(out[0].0, "w");
        assert_eq!(out[0].1.data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_shape_mismatch_and_truncation() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2]));
        let bytes = store.to_checkpoint();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[4]));
        assert!(other.load_checkpoint(&bytes).is_err());
    }
}
