//! Differentiable primitives and reverse-mode gradient propagation.

mod conv;
mod gradcheck;
pub mod layers;
mod tape;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use layers::{
    batchnorm2d, concat_channels, dense, dropout, maxpool2d, relu, select_channel, softmax_channels,
    split_channels, BatchNormState, Mode, BN_EPSILON, BN_MOMENTUM,
};
pub use tape::{Gradients, Tape, Var};
