//! Binary PGM (P5) and PPM (P6) with 8-bit samples.
//!
//! Images are `[H, W, C]` u8 tensors with C = 1 (PGM) or 3 (PPM). Headers
//! are written as `P5\n<w> <h>\n255\n`; the reader also accepts comments and
//! any maxval up to 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::objectives::LabelTensor;
use crate::tensor::Tensor;

pub fn encode(image: &Tensor<u8>) -> Result<Vec<u8>> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        [h, w] => (h, w, 1),
        _ => return Err(Error::dim(format!("image must be [H,W,C], got {:?}", image.shape()))),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::dim(format!("netpbm needs 1 or 3 bands, got {}", c))),
    };
    let mut out = format!("{}\n{} {}\n255\n", magic, w, h).into_bytes();
    out.extend_from_slice(image.data());
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    bands: usize,
    maxval: usize,
}

fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b' ' | b'\t' | b'\n' | b'\r' => pos += 1,
            _ => break,
        }
    }
    pos
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start, format!("expected {}", what)));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(start, format!("{} out of range", what)))
}

fn header(bytes: &[u8]) -> Result<(Header, usize)> {
    let bands = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "not a binary PGM/PPM (expected P5 or P6)")),
    };
    let mut pos = 2;
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval_at = skip_space(bytes, pos);
    let maxval = number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(maxval_at, format!("unsupported maxval {}", maxval)));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos, "missing whitespace after maxval")),
    }
    Ok((Header { width, height, bands, maxval }, pos))
}

/// Decodes to `[H, W, C]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<u8>> {
    let (h, start) = header(bytes)?;
    let n = h.width * h.height * h.bands;
    if bytes.len() < start + n {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster: expected {} bytes, found {}", n, bytes.len() - start),
        ));
    }
    let data = bytes[start..start + n].to_vec();
    if let Some(i) = data.iter().position(|&v| v as usize > h.maxval) {
        return Err(Error::format(start + i, format!("sample exceeds maxval {}", h.maxval)));
    }
    Tensor::new(&[h.height, h.width, h.bands], data)
}

pub fn write(path: impl AsRef<Path>, image: &Tensor<u8>) -> Result<()> {
    std::fs::write(path, encode(image)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<u8>> {
    decode(&std::fs::read(path)?)
}

/// Writes a single-sample label tensor as a PGM whose gray values are the
/// class ids.
pub fn write_mask(path: impl AsRef<Path>, mask: &LabelTensor) -> Result<()> {
    let [n, h, w] = mask.shape();
    if n != 1 {
        return Err(Error::dim(format!("expected one mask, got a batch of {}", n)));
    }
    write(path, &Tensor::new(&[h, w, 1], mask.data().to_vec())?)
}

/// Reads a PGM as `[1, H, W]` raw values.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelTensor> {
    let img = read(path)?;
    let [h, w, c] = [img.shape()[0], img.shape()[1], img.shape()[2]];
    if c != 1 {
        return Err(Error::dim("mask file must be single-band PGM"));
    }
    LabelTensor::new([1, h, w], img.into_data())
}
