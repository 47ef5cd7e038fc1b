//! CBNT binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CBNT" | version: u8 | dtype: u8 | rank: u8 | extents: rank x u64 | payload
//! ```
//!
//! dtype 1 is f32, dtype 2 is f64; the payload is row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CBNT";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            _ => Err(Error::Format(format!("unknown dtype byte {b}"))),
        }
    }
}

pub fn encode(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::Format(format!("rank {} too large", t.rank())))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(7 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(rank);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut r = bytes;
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    let dtype = DType::from_byte(head[5])?;
    let rank = head[6] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 8];
        r.read_exact(&mut e)
            .map_err(|_| Error::Format("truncated extents".into()))?;
        shape.push(usize::try_from(u64::from_le_bytes(e)).map_err(|_| {
            Error::Format("extent does not fit in usize".into())
        })?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    if r.len() != n * width {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            r.len(),
            n * width
        )));
    }
    let data = match dtype {
        DType::F32 => r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(&shape, data)
}

pub fn write_file(path: impl AsRef<Path>, t: &Tensor, dtype: DType) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t, dtype)?)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
        let b = encode(&t, DType::F64).unwrap();
        assert_eq!(&b[..4], b"CBNT");
        assert_eq!(b[4..7], [1, 2, 2]);
        assert_eq!(u64::from_le_bytes(b[7..15].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[15..23].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[23..31].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 7 + 16 + 16);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::zeros(&[3]);
        let mut b = encode(&t, DType::F32).unwrap();
        assert!(decode(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn f64_roundtrip_is_exact(shape in prop::collection::vec(1usize..4, 1..5), seed in any::<u64>()) {
            let mut rng = crate::tensor::Prng::new(seed);
            let t = Tensor::randn(&shape, 3.0, &mut rng);
            let back = decode(&encode(&t, DType::F64).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
