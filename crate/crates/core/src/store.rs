//! "MSW1" binary tensor container for phrase/song stores and label arrays.
//!
//! Layout, all little-endian: magic `MSW1`, version u32, dtype u8
//! (1 = u8, 2 = u32, 3 = f64), ndim u8, dims as u64, then row-major data.

use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MSW1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad container: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8 = 1,
    U32 = 2,
    F64 = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Tensor {
    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            dtype: Dtype::U8,
            shape,
            bytes: data,
        }
    }

    pub fn from_u32(shape: Vec<usize>, data: &[u32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            dtype: Dtype::U32,
            shape,
            bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            dtype: Dtype::F64,
            shape,
            bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8], StoreError> {
        match self.dtype {
            Dtype::U8 => Ok(&self.bytes),
            _ => Err(StoreError::Format("expected u8 tensor".into())),
        }
    }

    pub fn as_u32(&self) -> Result<Vec<u32>, StoreError> {
        match self.dtype {
            Dtype::U32 => Ok(self
                .bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()),
            _ => Err(StoreError::Format("expected u32 tensor".into())),
        }
    }

    pub fn as_f64(&self) -> Result<Vec<f64>, StoreError> {
        match self.dtype {
            Dtype::F64 => Ok(self
                .bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            _ => Err(StoreError::Format("expected f64 tensor".into())),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.bytes.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let need = |n: usize, pos: usize| {
            if pos + n > bytes.len() {
                Err(StoreError::Format("truncated container".into()))
            } else {
                Ok(())
            }
        };
        need(10, 0)?;
        if &bytes[0..4] != MAGIC {
            return Err(StoreError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let dtype = match bytes[8] {
            1 => Dtype::U8,
            2 => Dtype::U32,
            3 => Dtype::F64,
            other => return Err(StoreError::Format(format!("unknown dtype {other}"))),
        };
        let ndim = bytes[9] as usize;
        need(ndim * 8, 10)?;
        let mut shape = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let off = 10 + i * 8;
            shape.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
        }
        let data_off = 10 + ndim * 8;
        let elem = match dtype {
            Dtype::U8 => 1,
            Dtype::U32 => 4,
            Dtype::F64 => 8,
        };
        let expected = shape.iter().product::<usize>() * elem;
        if bytes.len() - data_off != expected {
            return Err(StoreError::Format(format!(
                "data length {} does not match shape {:?}",
                bytes.len() - data_off,
                shape
            )));
        }
        Ok(Self {
            dtype,
            shape,
            bytes: bytes[data_off..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic() {
        let t = Tensor::from_u8(vec![2], vec![1, 0]);
        let mut enc = t.encode();
        enc[0] = b'X';
        assert!(Tensor::decode(&enc).is_err());
    }

    #[test]
    fn rejects_truncated() {
        let t = Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0]);
        let enc = t.encode();
        assert!(Tensor::decode(&enc[..enc.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn u8_roundtrip(data in proptest::collection::vec(0u8..=1, 1..200)) {
            let t = Tensor::from_u8(vec![data.len()], data);
            prop_assert_eq!(Tensor::decode(&t.encode()).unwrap(), t);
        }

        #[test]
        fn f64_roundtrip_bit_exact(data in proptest::collection::vec(any::<f64>(), 1..50)) {
            let t = Tensor::from_f64(vec![data.len()], &data);
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.bytes, t.bytes);
        }
    }
}
