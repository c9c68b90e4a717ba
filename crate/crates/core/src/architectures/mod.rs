//! The modified U-Net and VGG-UNet.
//!
//! The modified U-Net has exactly ten convolutions: five single-conv
//! encoder stages (3x3 conv, batch norm, ReLU) separated by four 2x2 max
//! pools, four decoder stages (2x2 stride-2 transposed conv halving the
//! channels, concatenation with the matching encoder stage, one conv block)
//! and a 1x1 head conv, which counts as the fifth expansion layer. Dropout
//! follows the bottleneck stage and a per-pixel softmax closes the network.
//!
//! The VGG-UNet encoder is VGG16's 13 convolutions in blocks of
//! (2, 2, 3, 3, 3), each block followed by a 2x2 max pool. Its decoder has
//! five blocks of (3, 3, 3, 2, 2) conv blocks, each preceded by a transposed
//! conv to the mirrored block width and a skip concatenation with that
//! encoder block's pre-pool output. A per-pixel dense map produces the class
//! logits. Everything is trained from scratch.

mod model;
mod plan;
mod spec;

pub use model::{Forward, Model};
pub use plan::{
    conv_count, describe, shape_plan, LayerInfo, LayerKind, Shape3, UNET_WIDTHS, VGG_BLOCK_CONVS,
    VGG_WIDTHS,
};
pub use spec::{ModelKind, ModelSpec};
