//! Flat tensor payload used inside checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "EMBFTNSR"
//! version  u32      = 1
//! count    u32      number of entries
//! entry*   count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f64 × product(dims)
//! ```

use std::io::{Read, Write};

use super::{NumericsError, Tensor};

pub const PAYLOAD_MAGIC: &[u8; 8] = b"EMBFTNSR";
pub const PAYLOAD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PayloadEntry {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_payload<W: Write>(w: &mut W, entries: &[PayloadEntry]) -> Result<(), NumericsError> {
    w.write_all(PAYLOAD_MAGIC)?;
    w.write_all(&PAYLOAD_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in e.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(e.tensor.numel() * 8);
        for v in e.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NumericsError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_payload<R: Read>(r: &mut R) -> Result<Vec<PayloadEntry>, NumericsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PAYLOAD_MAGIC {
        return Err(NumericsError::Payload("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != PAYLOAD_VERSION {
        return Err(NumericsError::Payload(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NumericsError::Payload("name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(PayloadEntry { name, tensor: Tensor::new(shape, data)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(any::<f64>(), 0..40), rows in 1usize..4) {
            let n = values.len() / rows * rows;
            let t = Tensor::new(vec![rows, n / rows], values[..n].to_vec()).unwrap();
            let entries = vec![PayloadEntry { name: "a.w".into(), tensor: t }];
            let mut buf = Vec::new();
            write_payload(&mut buf, &entries).unwrap();
            let back = read_payload(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let a: Vec<u64> = entries[0].tensor.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back[0].tensor.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back[0].tensor.shape(), entries[0].tensor.shape());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTMAGIC\x01\0\0\0\0\0\0\0".to_vec();
        assert!(read_payload(&mut buf.as_slice()).is_err());
    }
}
