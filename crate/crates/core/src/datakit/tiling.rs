//! Sliding-window tiling with edge snapping, and the inverse stitch.

use crate::error::{Error, Result};
use crate::objectives::LabelTensor;
use crate::tensor::{Element, Tensor};

use super::{Provenance, Scene};

/// Window origins along one axis of length `len`. Windows step by
/// `tile - overlap`; the last one is shifted back to end flush with the
/// edge instead of being padded.
pub fn tile_origins(len: usize, tile: usize, overlap: usize) -> Result<Vec<usize>> {
    if tile == 0 || tile > len {
        return Err(Error::config(format!("tile {} does not fit extent {}", tile, len)));
    }
    if overlap >= tile {
        return Err(Error::config(format!("overlap {} must be below tile {}", overlap, tile)));
    }
    let stride = tile - overlap;
    let mut origins = vec![];
    let mut o = 0;
    loop {
        if o + tile >= len {
            origins.push(len - tile);
            return Ok(origins);
        }
        origins.push(o);
        o += stride;
    }
}

/// Copies the `th x tw` window at `(row, col)` out of an `[H, W, C]` tensor.
pub fn crop<T: Element>(t: &Tensor<T>, row: usize, col: usize, th: usize, tw: usize) -> Result<Tensor<T>> {
    let [h, w, c] = hwc(t)?;
    if row + th > h || col + tw > w {
        return Err(Error::dim(format!(
            "window {}x{} at ({}, {}) leaves {}x{} raster",
            th, tw, row, col, h, w
        )));
    }
    let mut data = Vec::with_capacity(th * tw * c);
    for r in row..row + th {
        let start = (r * w + col) * c;
        data.extend_from_slice(&t.data()[start..start + tw * c]);
    }
    Tensor::new(&[th, tw, c], data)
}

fn hwc<T: Element>(t: &Tensor<T>) -> Result<[usize; 3]> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::dim(format!("expected [H,W,C], got {:?}", t.shape()))),
    }
}

/// Cuts an image and its mask into square tiles. Provenance records each
/// tile's origin; `source` names the raster.
pub fn tile_raster(
    image: &Tensor<u8>,
    mask: &LabelTensor,
    tile: usize,
    overlap: usize,
    source: &str,
) -> Result<Vec<Scene>> {
    let [h, w, _] = hwc(image)?;
    if mask.shape() != [1, h, w] {
        return Err(Error::dim(format!("mask {:?} does not match image {:?}", mask.shape(), image.shape())));
    }
    let mask3 = Tensor::new(&[h, w, 1], mask.data().to_vec())?;
    let rows = tile_origins(h, tile, overlap)?;
    let cols = tile_origins(w, tile, overlap)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let m = crop(&mask3, r, c, tile, tile)?;
            out.push(Scene::new(
                crop(image, r, c, tile, tile)?,
                LabelTensor::new([1, tile, tile], m.into_data())?,
                Provenance { source: source.to_string(), origin: (r, c) },
            )?);
        }
    }
    Ok(out)
}

/// Pastes `[th, tw, C]` pieces at their `(row, col)` origins into an
/// `[height, width, C]` canvas. Overlaps go to the piece that comes last in
/// ascending `(row, col)` order. Every pixel must be covered.
pub fn stitch<T: Element + Default>(
    pieces: &[((usize, usize), &Tensor<T>)],
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let first = pieces.first().ok_or_else(|| Error::Coverage("no tiles to stitch".into()))?;
    let c = hwc(first.1)?[2];
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by_key(|&i| pieces[i].0);
    let mut out = vec![T::default(); height * width * c];
    let mut covered = vec![false; height * width];
    for i in order {
        let ((row, col), t) = pieces[i];
        let [th, tw, tc] = hwc(t)?;
        if tc != c || row + th > height || col + tw > width {
            return Err(Error::dim(format!(
                "tile {:?} at ({}, {}) does not fit a {}x{}x{} canvas",
                t.shape(),
                row,
                col,
                height,
                width,
                c
            )));
        }
        for r in 0..th {
            let dst = ((row + r) * width + col) * c;
            out[dst..dst + tw * c].copy_from_slice(&t.data()[r * tw * c..(r + 1) * tw * c]);
            covered[(row + r) * width + col..(row + r) * width + col + tw].fill(true);
        }
    }
    if let Some(first_gap) = covered.iter().position(|&v| !v) {
        let (mut r0, mut c0, mut r1, mut c1) = (first_gap / width, first_gap % width, 0, 0);
        for (i, _) in covered.iter().enumerate().filter(|(_, &v)| !v) {
            let (r, c) = (i / width, i % width);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        return Err(Error::Coverage(format!(
            "pixels in rows {}..={} cols {}..={} are not covered by any tile",
            r0, r1, c0, c1
        )));
    }
    Tensor::new(&[height, width, c], out)
}

/// Reassembles tiled scenes into the full image and mask.
pub fn stitch_tiles(tiles: &[Scene], height: usize, width: usize) -> Result<(Tensor<u8>, LabelTensor)> {
    let images: Vec<_> = tiles.iter().map(|s| (s.provenance.origin, &s.image)).collect();
    let masks = tiles
        .iter()
        .map(|s| Tensor::new(&[s.height(), s.width(), 1], s.mask.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mask_refs: Vec<_> = tiles.iter().zip(&masks).map(|(s, m)| (s.provenance.origin, m)).collect();
    let image = stitch(&images, height, width)?;
    let mask = stitch(&mask_refs, height, width)?;
    Ok((image, LabelTensor::new([1, height, width], mask.into_data())?))
}
