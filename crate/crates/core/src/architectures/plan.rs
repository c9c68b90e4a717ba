//! Network programs and their static shape plans.
//!
//! Both architectures are written once as a flat list of [`Step`]s. The same
//! list drives parameter allocation, the forward pass and the shape plan, so
//! the three cannot drift apart.

use std::fmt;

use super::spec::{ModelKind, ModelSpec};
use crate::error::Result;

pub const UNET_WIDTHS: [usize; 5] = [64, 128, 256, 512, 1024];
pub const VGG_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const VGG_BLOCK_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Step {
    /// 3x3 conv (padding 1) -> batch norm -> ReLU.
    ConvBlock { name: String, cin: usize, cout: usize },
    MaxPool,
    Dropout,
    /// Remember the current activation for a later skip connection.
    PushSkip,
    /// 2x2, stride-2 transposed convolution.
    Up { name: String, cin: usize, cout: usize },
    /// Concatenate `[upsampled, skip]` along channels.
    ConcatSkip,
    /// Pointwise convolution to class logits.
    Conv1x1 { name: String, cin: usize, cout: usize },
    /// Per-pixel dense map to class logits.
    Dense { name: String, cin: usize, cout: usize },
    Softmax,
}

pub(crate) fn program(spec: &ModelSpec) -> Result<Vec<Step>> {
    spec.validate()?;
    Ok(match spec.kind {
        ModelKind::ModifiedUnet => modified_unet(spec),
        ModelKind::VggUnet => vgg_unet(spec),
    })
}

fn modified_unet(spec: &ModelSpec) -> Vec<Step> {
    let w: Vec<usize> = UNET_WIDTHS.iter().map(|&b| spec.scaled(b)).collect();
    let mut steps = Vec::new();
    let mut cin = spec.input_channels;
    for (i, &width) in w.iter().enumerate() {
        steps.push(Step::ConvBlock {
            name: format!("enc{}", i + 1),
            cin,
            cout: width,
        });
        cin = width;
        if i < 4 {
            steps.push(Step::PushSkip);
            steps.push(Step::MaxPool);
        }
    }
    steps.push(Step::Dropout);
    for j in 0..4 {
        let level = 3 - j;
        steps.push(Step::Up {
            name: format!("up{}", j + 1),
            cin,
            cout: w[level],
        });
        steps.push(Step::ConcatSkip);
        steps.push(Step::ConvBlock {
            name: format!("dec{}", j + 1),
            cin: 2 * w[level],
            cout: w[level],
        });
        cin = w[level];
    }
    steps.push(Step::Conv1x1 {
        name: "head".into(),
        cin,
        cout: spec.num_classes,
    });
    steps.push(Step::Softmax);
    steps
}

fn vgg_unet(spec: &ModelSpec) -> Vec<Step> {
    let w: Vec<usize> = VGG_WIDTHS.iter().map(|&b| spec.scaled(b)).collect();
    let mut steps = Vec::new();
    let mut cin = spec.input_channels;
    for (b, (&width, &convs)) in w.iter().zip(&VGG_BLOCK_CONVS).enumerate() {
        for k in 0..convs {
            steps.push(Step::ConvBlock {
                name: format!("enc{}_{}", b + 1, k + 1),
                cin,
                cout: width,
            });
            cin = width;
        }
        steps.push(Step::PushSkip);
        steps.push(Step::MaxPool);
    }
    steps.push(Step::Dropout);
    for j in 0..5 {
        let mirror = 4 - j;
        let width = w[mirror];
        steps.push(Step::Up {
            name: format!("up{}", j + 1),
            cin,
            cout: width,
        });
        steps.push(Step::ConcatSkip);
        let mut c = 2 * width;
        for k in 0..VGG_BLOCK_CONVS[mirror] {
            steps.push(Step::ConvBlock {
                name: format!("dec{}_{}", j + 1, k + 1),
                cin: c,
                cout: width,
            });
            c = width;
        }
        cin = width;
    }
    steps.push(Step::Dense {
        name: "head".into(),
        cin,
        cout: spec.num_classes,
    });
    steps.push(Step::Softmax);
    steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    BatchNorm,
    Relu,
    MaxPool,
    Dropout,
    ConvTranspose,
    Concat,
    Conv1x1,
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Conv3x3 => "conv3x3",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool2x2",
            LayerKind::Dropout => "dropout",
            LayerKind::ConvTranspose => "convtranspose2x2",
            LayerKind::Concat => "concat",
            LayerKind::Conv1x1 => "conv1x1",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv3x3 | LayerKind::Conv1x1)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// `[H, W, C]` of a single sample.
pub type Shape3 = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub kind: LayerKind,
    /// Owning block (`enc1`, `up2`, `head`, ...); empty for parameter-free
    /// layers outside a block.
    pub block: String,
    pub in_shape: Shape3,
    pub out_shape: Shape3,
    /// The skip tensor joined by a concat layer.
    pub skip_shape: Option<Shape3>,
    pub params: usize,
}

/// Static shape trace of the network described by `spec`.
pub fn shape_plan(spec: &ModelSpec) -> Result<Vec<LayerInfo>> {
    let steps = program(spec)?;
    let mut plan = Vec::new();
    let mut cur: Shape3 = [spec.input_height, spec.input_width, spec.input_channels];
    let mut skips: Vec<Shape3> = Vec::new();
    let row = |plan: &mut Vec<LayerInfo>, kind, block: &str, from: Shape3, to: Shape3, params| {
        plan.push(LayerInfo {
            kind,
            block: block.to_string(),
            in_shape: from,
            out_shape: to,
            skip_shape: None,
            params,
        });
    };
    for step in &steps {
        match step {
            Step::ConvBlock { name, cin, cout } => {
                let out = [cur[0], cur[1], *cout];
                row(&mut plan, LayerKind::Conv3x3, name, cur, out, 9 * cin * cout + cout);
                row(&mut plan, LayerKind::BatchNorm, name, out, out, 2 * cout);
                row(&mut plan, LayerKind::Relu, name, out, out, 0);
                cur = out;
            }
            Step::MaxPool => {
                let out = [cur[0] / 2, cur[1] / 2, cur[2]];
                row(&mut plan, LayerKind::MaxPool, "", cur, out, 0);
                cur = out;
            }
            Step::Dropout => row(&mut plan, LayerKind::Dropout, "", cur, cur, 0),
            Step::PushSkip => skips.push(cur),
            Step::Up { name, cin, cout } => {
                let out = [cur[0] * 2, cur[1] * 2, *cout];
                row(&mut plan, LayerKind::ConvTranspose, name, cur, out, 4 * cin * cout);
                cur = out;
            }
            Step::ConcatSkip => {
                let skip = skips.pop().expect("balanced skips");
                let out = [cur[0], cur[1], cur[2] + skip[2]];
                row(&mut plan, LayerKind::Concat, "", cur, out, 0);
                plan.last_mut().unwrap().skip_shape = Some(skip);
                cur = out;
            }
            Step::Conv1x1 { name, cin, cout } => {
                let out = [cur[0], cur[1], *cout];
                row(&mut plan, LayerKind::Conv1x1, name, cur, out, cin * cout + cout);
                cur = out;
            }
            Step::Dense { name, cin, cout } => {
                let out = [cur[0], cur[1], *cout];
                row(&mut plan, LayerKind::Dense, name, cur, out, cin * cout + cout);
                cur = out;
            }
            Step::Softmax => row(&mut plan, LayerKind::Softmax, "", cur, cur, 0),
        }
    }
    Ok(plan)
}

/// Count of convolution layers (3x3 and 1x1) in a plan.
pub fn conv_count(plan: &[LayerInfo]) -> usize {
    plan.iter().filter(|l| l.kind.is_conv()).count()
}

fn fmt_shape(s: &Shape3) -> String {
    format!("[{},{},{}]", s[0], s[1], s[2])
}

/// Plain-text layer table: index, kind, in-shape, out-shape and parameter
/// count per row, followed by a totals row.
pub fn describe(spec: &ModelSpec) -> Result<String> {
    let plan = shape_plan(spec)?;
    let mut out = String::new();
    out.push_str(&format!(
        "model {} input {}x{}x{} classes {} width x{}\n",
        spec.kind, spec.input_height, spec.input_width, spec.input_channels, spec.num_classes, spec.width_multiplier
    ));
    out.push_str(&format!(
        "{:>5}  {:<18} {:<8} {:<30} {:<18} {:>12}\n",
        "index", "kind", "block", "in", "out", "params"
    ));
    for (i, l) in plan.iter().enumerate() {
        let input = match l.skip_shape {
            Some(s) => format!("{}+{}", fmt_shape(&l.in_shape), fmt_shape(&s)),
            None => fmt_shape(&l.in_shape),
        };
        out.push_str(&format!(
            "{:>5}  {:<18} {:<8} {:<30} {:<18} {:>12}\n",
            i,
            l.kind.label(),
            l.block,
            input,
            fmt_shape(&l.out_shape),
            l.params
        ));
    }
    let total: usize = plan.iter().map(|l| l.params).sum();
    out.push_str(&format!(
        "total  layers={} convs={} params={}\n",
        plan.len(),
        conv_count(&plan),
        total
    ));
    Ok(out)
}
