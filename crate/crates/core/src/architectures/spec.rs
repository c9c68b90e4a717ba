use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Binary-segmentation U-Net with single-conv blocks and four pools.
    ModifiedUnet,
    /// VGG16-style encoder (13 convs, five pooled blocks) with a mirrored decoder.
    VggUnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ModifiedUnet => "modified_unet",
            ModelKind::VggUnet => "vgg_unet",
        }
    }

    /// Spatial dims must be divisible by this (2^pools).
    pub fn divisor(self) -> usize {
        match self {
            ModelKind::ModifiedUnet => 16,
            ModelKind::VggUnet => 32,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::ModifiedUnet => 0,
            ModelKind::VggUnet => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::ModifiedUnet),
            1 => Some(ModelKind::VggUnet),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modified_unet" => Ok(ModelKind::ModifiedUnet),
            "vgg_unet" => Ok(ModelKind::VggUnet),
            other => Err(Error::config(format!(
                "unknown model '{}' (expected modified_unet or vgg_unet)",
                other
            ))),
        }
    }
}

/// Declarative description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Number of labels, N+1 for ids 0..=N.
    pub num_classes: usize,
    /// Scales every channel width; 1.0 reproduces the full-size network.
    pub width_multiplier: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, height: usize, width: usize, channels: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind,
            input_height: height,
            input_width: width,
            input_channels: channels,
            num_classes,
            width_multiplier: 1.0,
            dropout_rate: 0.5,
            seed: 0,
        }
    }

    pub fn with_width(mut self, multiplier: f64) -> Self {
        self.width_multiplier = multiplier;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.kind.divisor();
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % d != 0
            || self.input_width % d != 0
        {
            return Err(Error::config(format!(
                "{} needs input dims divisible by {}, got {}x{}",
                self.kind, d, self.input_height, self.input_width
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be >= 1"));
        }
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::config(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::config(format!(
                "width_multiplier must be > 0, got {}",
                self.width_multiplier
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `ceil(multiplier * base)`, at least 1.
    pub fn scaled(&self, base: usize) -> usize {
        let v = self.width_multiplier * base as f64;
        // tolerate representation error in products such as 0.1 * 640
        ((v - 1e-9).ceil() as usize).max(1)
    }
}
