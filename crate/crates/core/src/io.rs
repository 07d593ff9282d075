//! Binary tensor container.
//!
//! Layout (little endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `PODF` |
//! | 1 | version, 1 |
//! | 1 | dtype: 0 = f64, 1 = f32 |
//! | 1 | rank, 1..=4 |
//! | 1 | reserved, 0 |
//! | 4 x rank | extents, u32 |
//! | rest | row-major payload |
//!
//! Files are written as rank 4. Lower ranks are read as trailing extents,
//! so a rank-2 `(r, c)` payload loads as `(1, 1, r, c)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"PODF";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Header length for a tensor of the given rank.
pub fn header_len(rank: usize) -> usize {
    8 + 4 * rank
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(4) + t.numel() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dtype.code(), 4, 0]);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    out
}

/// Parse a container; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let dtype = match bytes[5] {
        0 => Dtype::F64,
        1 => Dtype::F32,
        d => {
            return Err(Error::UnsupportedDtype {
                path: path.to_path_buf(),
                dtype: d,
            })
        }
    };
    let rank = bytes[6] as usize;
    if !(1..=4).contains(&rank) || bytes[7] != 0 {
        return Err(Error::Format {
            what: "tensor header",
            detail: format!("{}: rank {rank}, reserved byte {}", path.display(), bytes[7]),
        });
    }
    let hl = header_len(rank);
    if bytes.len() < hl {
        return Err(truncated(hl));
    }
    let mut dims = [1usize; 4];
    for i in 0..rank {
        let b = &bytes[8 + 4 * i..][..4];
        dims[4 - rank + i] = u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    }
    let shape = Shape(dims);
    let expected = hl + shape.numel() * dtype.size();
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(truncated(expected));
        }
        return Err(Error::Format {
            what: "tensor payload",
            detail: format!("{}: {} trailing bytes", path.display(), bytes.len() - expected),
        });
    }
    let payload = &bytes[hl..];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t, Dtype::F64)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
