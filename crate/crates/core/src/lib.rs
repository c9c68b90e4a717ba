//! From-scratch semantic segmentation for remote-sensing rasters.
//!
//! The crate covers the whole pipeline: tiling rasters and encoding labels
//! ([`datakit`]), a tensor library with reverse-mode differentiation
//! ([`autodiff`]), the single-conv-block modified U-Net and the VGG-UNet
//! ([`architectures`]), cross-entropy losses and IoU metrics
//! ([`objectives`]), Adam ([`optimizer`]) and the training / evaluation /
//! prediction loop with exact-resume checkpoints ([`engine`]).

pub mod architectures;
pub mod autodiff;
pub mod datakit;
pub mod engine;
pub mod error;
pub mod objectives;
pub mod optimizer;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::Tensor;
