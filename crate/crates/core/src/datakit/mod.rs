//! Data preparation: tiling and stitching rasters, encoding labels,
//! train/validation splits, synthetic scenes and on-disk datasets.
//!
//! Images are kept as `[H, W, C]` u8 tensors so that everything written to
//! disk reads back exactly. They are scaled to f32 in `[0, 1]` only when a
//! batch is assembled for the network.

mod dataset;
mod labelmap;
pub mod netpbm;
mod split;
mod synth;
mod tiling;

use std::fmt;

use crate::error::{Error, Result};
use crate::objectives::LabelTensor;
use crate::tensor::Tensor;

pub use dataset::{read_dataset, write_dataset, MANIFEST};
pub use labelmap::LabelMap;
pub use split::{split_dataset, SampleSet, Split};
pub use synth::{synth_dataset, synth_scene, synth_scene_shapes, SceneSpec, Shape, Task};
pub use tiling::{crop, stitch, stitch_tiles, tile_origins, tile_raster};

/// Where a scene came from: a synthetic tag or file path, plus the
/// top-left `(row, col)` of the tile inside that source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub origin: (usize, usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{},{}", self.source, self.origin.0, self.origin.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `[H, W, C]`.
    pub image: Tensor<u8>,
    /// `[1, H, W]` class ids.
    pub mask: LabelTensor,
    pub provenance: Provenance,
}

impl Scene {
    pub fn new(image: Tensor<u8>, mask: LabelTensor, provenance: Provenance) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 {
            return Err(Error::dim(format!("scene image must be [H,W,C], got {:?}", s)));
        }
        let [n, h, w] = mask.shape();
        if n != 1 || h != s[0] || w != s[1] {
            return Err(Error::dim(format!(
                "mask {:?} does not match image {:?}",
                mask.shape(),
                s
            )));
        }
        Ok(Scene { image, mask, provenance })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[2]
    }

    /// The image scaled to `[0, 1]`.
    pub fn image_f32(&self) -> Tensor<f32> {
        to_unit(&self.image)
    }
}

pub fn to_unit(image: &Tensor<u8>) -> Tensor<f32> {
    image.map(|v| v as f32 / 255.0)
}

/// Stacks scene images into `[N, H, W, C]` f32 and masks into `[N, H, W]`.
pub fn batch(scenes: &[&Scene]) -> Result<(Tensor<f32>, LabelTensor)> {
    if scenes.is_empty() {
        return Err(Error::dim("empty batch"));
    }
    let images = scenes
        .iter()
        .map(|s| {
            let (h, w, c) = (s.height(), s.width(), s.channels());
            s.image_f32().reshape(&[1, h, w, c])
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    let x = Tensor::stack(&refs)?;
    let masks: Vec<&LabelTensor> = scenes.iter().map(|s| &s.mask).collect();
    Ok((x, LabelTensor::stack(&masks)?))
}
