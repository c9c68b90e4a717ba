//! Seeded synthetic scenes standing in for restricted satellite products.
//!
//! Binary tasks place hard-edged, non-overlapping shapes (label 0) on a
//! textured background (label 1), so the mask area is the analytic area of
//! the placed shapes up to rasterization. The multilabel task partitions the
//! tile into seeded regions of classes 0-3 separated by class-4 bands.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objectives::LabelTensor;
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::split::{split_dataset, SampleSet};
use super::{Provenance, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Buildings,
    ShipsOptical,
    ShipsSar,
    Trees,
    Multilabel,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Buildings, Task::ShipsOptical, Task::ShipsSar, Task::Trees, Task::Multilabel];

    pub fn name(self) -> &'static str {
        match self {
            Task::Buildings => "buildings",
            Task::ShipsOptical => "ships_optical",
            Task::ShipsSar => "ships_sar",
            Task::Trees => "trees",
            Task::Multilabel => "multilabel",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::Multilabel => 5,
            _ => 2,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Buildings => &["building", "background"],
            Task::ShipsOptical | Task::ShipsSar => &["ship", "background"],
            Task::Trees => &["tree", "background"],
            Task::Multilabel => &["urban", "water", "land", "tree", "other"],
        }
    }

    pub fn default_channels(self) -> usize {
        match self {
            Task::Multilabel => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
            Error::Usage(format!("unknown task '{}' (valid: {})", s, names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub task: Task,
    pub size: usize,
    /// Inclusive range of objects (clusters for trees, regions for
    /// multilabel).
    pub objects: (usize, usize),
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub channels: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(task: Task, size: usize, seed: u64) -> Self {
        let objects = match task {
            Task::Buildings => (3, 8),
            Task::ShipsOptical => (2, 5),
            Task::ShipsSar => (2, 6),
            Task::Trees => (2, 4),
            Task::Multilabel => (5, 9),
        };
        let noise = match task {
            Task::Buildings | Task::Trees => 0.05,
            Task::ShipsSar => 0.0,
            Task::ShipsOptical | Task::Multilabel => 0.03,
        };
        SceneSpec { task, size, objects, noise, channels: task.default_channels(), seed }
    }

    pub fn with_objects(mut self, lo: usize, hi: usize) -> Self {
        self.objects = (lo, hi);
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::config(format!("scene size {} is below 64", self.size)));
        }
        if self.objects.0 > self.objects.1 {
            return Err(Error::config(format!("object range {:?} is empty", self.objects)));
        }
        if self.task == Task::Multilabel && self.objects.0 < 1 {
            return Err(Error::config("multilabel scenes need at least one region"));
        }
        if self.channels == 0 || self.channels > 16 {
            return Err(Error::config(format!("unsupported channel count {}", self.channels)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!("invalid noise level {}", self.noise)));
        }
        Ok(())
    }
}

/// A placed shape in pixel coordinates; pixel `(row, col)` is sampled at
/// its center `(col + 0.5, row + 0.5)`. Angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { cx: f64, cy: f64, w: f64, h: f64, angle: f64 },
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, angle: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Rect { cx, cy, .. } | Shape::Ellipse { cx, cy, .. } | Shape::Disk { cx, cy, .. } => (cx, cy),
        }
    }

    fn radius(&self) -> f64 {
        match *self {
            Shape::Rect { w, h, .. } => 0.5 * w.hypot(h),
            Shape::Ellipse { a, b, .. } => a.max(b),
            Shape::Disk { r, .. } => r,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center();
        let (dx, dy) = (x - cx, y - cy);
        match *self {
            Shape::Rect { w, h, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                u.abs() <= 0.5 * w && v.abs() <= 0.5 * h
            }
            Shape::Ellipse { a, b, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Disk { r, .. } => dx * dx + dy * dy <= r * r,
        }
    }
}

struct Canvas {
    size: usize,
    channels: usize,
    pixels: Vec<f64>,
    mask: Vec<u8>,
}

impl Canvas {
    fn new(size: usize, channels: usize, background: u8) -> Self {
        Canvas {
            size,
            channels,
            pixels: vec![0.0; size * size * channels],
            mask: vec![background; size * size],
        }
    }

    fn fill(&mut self, mut f: impl FnMut(usize, usize, usize) -> f64) {
        let (s, c) = (self.size, self.channels);
        for r in 0..s {
            for col in 0..s {
                for k in 0..c {
                    self.pixels[(r * s + col) * c + k] = f(r, col, k);
                }
            }
        }
    }

    /// Sets label `class` and calls `value` for every pixel inside `shape`.
    fn paint(&mut self, shape: &Shape, class: u8, mut value: impl FnMut(usize, usize, usize) -> f64) {
        let (cx, cy) = shape.center();
        let rad = shape.radius();
        let lo = |v: f64| (v - rad - 1.0).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + rad + 1.0).ceil() as usize).min(self.size);
        for r in lo(cy)..hi(cy) {
            for col in lo(cx)..hi(cx) {
                if shape.contains(col as f64 + 0.5, r as f64 + 0.5) {
                    self.mask[r * self.size + col] = class;
                    for k in 0..self.channels {
                        self.pixels[(r * self.size + col) * self.channels + k] = value(r, col, k);
                    }
                }
            }
        }
    }

    fn finish(self, spec: &SceneSpec) -> Result<Scene> {
        let s = self.size;
        let image = self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Scene::new(
            Tensor::new(&[s, s, self.channels], image)?,
            LabelTensor::new([1, s, s], self.mask)?,
            Provenance {
                source: format!("synthetic:{}:seed={}", spec.task, spec.seed),
                origin: (0, 0),
            },
        )
    }
}

/// Rejection-samples up to `count` shapes that stay inside the tile and keep
/// a two-pixel gap between bounding circles.
fn place(rng: &mut RngStream, size: usize, count: usize, mut draw: impl FnMut(&mut RngStream, f64, f64) -> Shape) -> Vec<Shape> {
    let s = size as f64;
    let mut placed: Vec<Shape> = vec![];
    for _ in 0..count {
        for _attempt in 0..64 {
            let (x, y) = (rng.uniform_in(0.0, s), rng.uniform_in(0.0, s));
            let shape = draw(rng, x, y);
            let (x, y) = shape.center();
            let r = shape.radius();
            if x - r < 1.0 || y - r < 1.0 || x + r > s - 1.0 || y + r > s - 1.0 {
                continue;
            }
            let clear = placed.iter().all(|p| {
                let (px, py) = p.center();
                (px - x).hypot(py - y) >= p.radius() + r + 2.0
            });
            if clear {
                placed.push(shape);
                break;
            }
        }
    }
    placed
}

fn count(rng: &mut RngStream, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    Ok(synth_scene_shapes(spec)?.0)
}

/// Like [`synth_scene`] but also returns the shapes painted as class 0
/// (empty for the multilabel task).
pub fn synth_scene_shapes(spec: &SceneSpec) -> Result<(Scene, Vec<Shape>)> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);
    let s = spec.size as f64;
    let sigma = spec.noise;
    let mut canvas = Canvas::new(spec.size, spec.channels, 1);
    let shapes = match spec.task {
        Task::Buildings => {
            let ground = rng.uniform_in(0.25, 0.35);
            canvas.fill(|_, _, _| ground + sigma * rng.normal());
            let n = count(&mut rng, spec.objects);
            let shapes = place(&mut rng, spec.size, n, |rng, cx, cy| Shape::Rect {
                cx,
                cy,
                w: (rng.uniform_in(0.06, 0.16) * s).max(4.0),
                h: (rng.uniform_in(0.06, 0.16) * s).max(4.0),
                angle: rng.uniform_in(0.0, PI),
            });
            for sh in &shapes {
                let level = rng.uniform_in(0.6, 0.9);
                canvas.paint(sh, 0, |_, _, _| level + sigma * rng.normal());
            }
            shapes
        }
        Task::ShipsOptical => {
            let base = rng.uniform_in(0.1, 0.2);
            let (phi, wavelength) = (rng.uniform_in(0.0, PI), rng.uniform_in(6.0, 12.0));
            let (sp, cp) = phi.sin_cos();
            canvas.fill(|r, c, _| {
                let t = (c as f64 * cp + r as f64 * sp) / wavelength;
                base + 0.03 * (2.0 * PI * t).sin() + sigma * rng.normal()
            });
            let n = count(&mut rng, spec.objects);
            let shapes = place(&mut rng, spec.size, n, |rng, cx, cy| {
                let a = (rng.uniform_in(0.07, 0.14) * s).max(4.0);
                Shape::Ellipse { cx, cy, a, b: (a * rng.uniform_in(0.3, 0.45)).max(2.0), angle: rng.uniform_in(0.0, PI) }
            });
            for sh in &shapes {
                let level = rng.uniform_in(0.75, 0.95);
                canvas.paint(sh, 0, |_, _, _| level + sigma * rng.normal());
            }
            shapes
        }
        Task::ShipsSar => {
            let sea = rng.uniform_in(0.06, 0.12);
            let n = count(&mut rng, spec.objects);
            let shapes = place(&mut rng, spec.size, n, |rng, cx, cy| {
                let a = (rng.uniform_in(0.06, 0.12) * s).max(4.0);
                Shape::Ellipse { cx, cy, a, b: (a * rng.uniform_in(0.2, 0.35)).max(2.0), angle: rng.uniform_in(0.0, PI) }
            });
            // reflectivity first, then one multiplicative speckle draw per sample
            canvas.fill(|_, _, _| sea);
            for sh in &shapes {
                let level = rng.uniform_in(0.7, 0.9);
                canvas.paint(sh, 0, |_, _, _| level);
            }
            for v in canvas.pixels.iter_mut() {
                *v = *v * rng.exponential() + sigma * rng.normal();
            }
            shapes
        }
        Task::Trees => {
            let field = rng.uniform_in(0.5, 0.6);
            let (phi, wavelength) = (rng.uniform_in(0.0, PI), rng.uniform_in(4.0, 8.0));
            let (sp, cp) = phi.sin_cos();
            canvas.fill(|r, c, _| {
                let t = (c as f64 * cp + r as f64 * sp) / wavelength;
                field + 0.06 * (2.0 * PI * t).sin() + sigma * rng.normal()
            });
            let clusters = count(&mut rng, spec.objects);
            let mut disks: Vec<Shape> = vec![];
            for _ in 0..clusters {
                let (ccx, ccy) = (rng.uniform_in(0.15, 0.85) * s, rng.uniform_in(0.15, 0.85) * s);
                let members = 3 + rng.below(4);
                let more = place(&mut rng, spec.size, members, |rng, _, _| {
                    let spread = 0.12 * s;
                    Shape::Disk {
                        cx: ccx + rng.uniform_in(-spread, spread),
                        cy: ccy + rng.uniform_in(-spread, spread),
                        r: (rng.uniform_in(0.025, 0.05) * s).max(2.5),
                    }
                });
                for d in more {
                    let (x, y) = d.center();
                    let clear = disks.iter().all(|p| {
                        let (px, py) = p.center();
                        (px - x).hypot(py - y) >= p.radius() + d.radius() + 2.0
                    });
                    if clear {
                        disks.push(d);
                    }
                }
            }
            for sh in &disks {
                let level = rng.uniform_in(0.18, 0.28);
                canvas.paint(sh, 0, |_, _, _| level + 1.5 * sigma * rng.normal());
            }
            disks
        }
        Task::Multilabel => {
            multilabel(&mut canvas, &mut rng, spec);
            vec![]
        }
    };
    Ok((canvas.finish(spec)?, shapes))
}

/// Mean colour per multilabel class (urban, water, land, tree, other).
const PALETTE: [[f64; 3]; 5] = [
    [0.62, 0.60, 0.60],
    [0.10, 0.20, 0.45],
    [0.60, 0.45, 0.28],
    [0.15, 0.42, 0.15],
    [0.92, 0.90, 0.82],
];

fn multilabel(canvas: &mut Canvas, rng: &mut RngStream, spec: &SceneSpec) {
    let s = spec.size as f64;
    let regions = count(rng, spec.objects);
    let mut classes: Vec<u8> = (0..regions).map(|i| if i < 4 { i as u8 } else { rng.below(4) as u8 }).collect();
    rng.shuffle(&mut classes);
    let seeds: Vec<(f64, f64)> = (0..regions).map(|_| (rng.uniform_in(0.0, s), rng.uniform_in(0.0, s))).collect();
    let band = (0.035 * s).max(2.0);
    let size = spec.size;
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let dist: Vec<f64> = seeds.iter().map(|&(sx, sy)| (sx - x).hypot(sy - y)).collect();
            let near = (0..regions).min_by(|&i, &j| dist[i].total_cmp(&dist[j])).unwrap();
            let class = classes[near];
            let other = (0..regions)
                .filter(|&j| classes[j] != class)
                .map(|j| dist[j])
                .min_by(f64::total_cmp);
            canvas.mask[r * size + c] = match other {
                Some(d) if d - dist[near] < band => 4,
                _ => class,
            };
        }
    }
    let ch = canvas.channels;
    for r in 0..size {
        for c in 0..size {
            let class = canvas.mask[r * size + c] as usize;
            let texture = match class {
                0 => 0.08 * if (r / 4 + c / 4) % 2 == 0 { 1.0 } else { -1.0 },
                2 => 0.04 * ((r as f64 / 7.0).sin() + (c as f64 / 9.0).cos()),
                3 => 0.08 * rng.normal(),
                _ => 0.0,
            };
            for k in 0..ch {
                let v = PALETTE[class][k % 3] + texture + spec.noise * rng.normal();
                canvas.pixels[(r * size + c) * ch + k] = v;
            }
        }
    }
}

/// `count` scenes drawn from `template` with per-scene seeds derived from
/// `template.seed`, split 80:20 with the same seed.
pub fn synth_dataset(template: &SceneSpec, count: usize) -> Result<SampleSet> {
    template.validate()?;
    let scenes = (0..count)
        .map(|i| {
            let seed = RngStream::substream(template.seed, i as u64 + 1).next_u64();
            synth_scene(&template.clone().with_seed(seed))
        })
        .collect::<Result<Vec<_>>>()?;
    split_dataset(scenes, (4, 5), template.seed)
}
