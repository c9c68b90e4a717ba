//! The `TNSR` v1 tensor file format.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 4            | magic `TNSR`                              |
//! | 1            | version, always 1                         |
//! | 1            | dtype code: 0 = f32, 1 = f64, 2 = u8      |
//! | 1            | rank                                      |
//! | 4 × rank     | dimensions as u32                         |
//! | payload      | row-major values, little-endian           |

use std::fs;
use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 1;

/// A decoded tensor of whichever dtype the file declared.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
        }
    }
}

pub fn encode<T: Element>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(tensor.len() * T::DTYPE.size());
    for &v in tensor.data() {
        v.write_le(out);
    }
}

pub fn to_bytes<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    encode(tensor, &mut out);
    out
}

/// Decodes one tensor from the front of `bytes`, returning it with the number
/// of bytes consumed. `base` is added to reported error offsets.
pub fn decode_any(bytes: &[u8], base: usize) -> Result<(AnyTensor, usize)> {
    let header = |need: usize, what: &str| -> Result<()> {
        if bytes.len() < need {
            Err(Error::format(
                base + bytes.len(),
                format!("truncated TNSR {}", what),
            ))
        } else {
            Ok(())
        }
    };
    header(7, "header")?;
    if &bytes[..4] != MAGIC {
        return Err(Error::format(base, "bad TNSR magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(
            base + 4,
            format!("unsupported TNSR version {}", bytes[4]),
        ));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::format(base + 5, format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    header(7 + 4 * rank, "dimensions")?;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 7 + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::format(base + at, "zero-sized dimension"));
        }
        shape.push(d);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(base + 7, "dimension product overflows"))?;
    let start = 7 + 4 * rank;
    let end = count
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| Error::format(base + 7, "payload size overflows"))?;
    if bytes.len() < end {
        return Err(Error::format(
            base + bytes.len(),
            format!("truncated TNSR payload: need {} bytes, have {}", end, bytes.len()),
        ));
    }
    let payload = &bytes[start..end];
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(read_payload(&shape, payload)?),
        DType::F64 => AnyTensor::F64(read_payload(&shape, payload)?),
        DType::U8 => AnyTensor::U8(read_payload(&shape, payload)?),
    };
    Ok((tensor, end))
}

fn read_payload<T: Element>(shape: &[usize], payload: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

/// Decodes a tensor that must have element type `T`.
pub fn decode<T: Element>(bytes: &[u8], base: usize) -> Result<(Tensor<T>, usize)> {
    let (any, used) = decode_any(bytes, base)?;
    let found = any.dtype();
    let tensor = downcast::<T>(any)
        .ok_or_else(|| Error::format(base + 5, format!("expected dtype {}, found {}", T::DTYPE, found)))?;
    Ok((tensor, used))
}

fn downcast<T: Element>(any: AnyTensor) -> Option<Tensor<T>> {
    use std::any::Any;
    let boxed: Box<dyn Any> = match any {
        AnyTensor::F32(t) => Box::new(t),
        AnyTensor::F64(t) => Box::new(t),
        AnyTensor::U8(t) => Box::new(t),
    };
    boxed.downcast::<Tensor<T>>().ok().map(|b| *b)
}

pub fn from_bytes<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (t, used) = decode(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(used, "trailing bytes after TNSR payload"));
    }
    Ok(t)
}

pub fn write<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    fs::write(path, to_bytes(tensor))?;
    Ok(())
}

pub fn read<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    from_bytes(&fs::read(path)?)
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let bytes = fs::read(path)?;
    let (t, used) = decode_any(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(used, "trailing bytes after TNSR payload"));
    }
    Ok(t)
}
