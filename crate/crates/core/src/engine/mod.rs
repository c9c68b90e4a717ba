//! Training, evaluation, whole-scene prediction and checkpoints.
//!
//! Training is fully determined by the model spec, the [`TrainConfig`] and
//! the data: epoch `e` visits the training split in an order drawn from
//! stream `e` of the config seed, and dropout draws from a separate stream
//! whose position is saved in every checkpoint.

mod checkpoint;
mod history;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use indexmap::IndexMap;

use crate::architectures::{Model, ModelSpec};
use crate::autodiff::{Mode, Tape};
use crate::datakit::{batch, crop, stitch, tile_origins, to_unit, SampleSet, Scene};
use crate::error::{Error, Result};
use crate::objectives::{argmax, confusion, metrics_report, ConfusionCounts, LabelTensor, MetricsReport};
use crate::optimizer::{adam_init, adam_step, AdamConfig, AdamState};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use history::{History, HistoryEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    BinaryCe,
    CategoricalCe,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::BinaryCe => "binary_ce",
            LossKind::CategoricalCe => "categorical_ce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary_ce" => Ok(LossKind::BinaryCe),
            "categorical_ce" => Ok(LossKind::CategoricalCe),
            _ => Err(Error::config(format!("unknown loss '{}' (binary_ce or categorical_ce)", s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub seed: u64,
    /// Evaluate both splits after every epoch. When off, only the last
    /// epoch is evaluated and earlier History entries carry NaN metrics.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 4,
            adam: AdamConfig::default(),
            loss: LossKind::BinaryCe,
            seed: 0,
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if self.loss == LossKind::BinaryCe && num_classes != 2 {
            return Err(Error::config(format!("binary_ce needs 2 classes, model has {}", num_classes)));
        }
        self.adam.validate()
    }
}

/// Stream index reserved for dropout; shuffles use the epoch number.
const DROPOUT_STREAM: u64 = 1 << 63;

/// A model plus everything needed to continue training it exactly.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub history: History,
    config: TrainConfig,
    rng: RngStream,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate(model.spec().num_classes)?;
        let adam = adam_init(model.params(), config.adam);
        let rng = RngStream::substream(config.seed, DROPOUT_STREAM);
        Ok(Trainer { model, adam, history: History::default(), config, rng })
    }

    /// Continues from a checkpoint. The optimizer hyperparameters stored in
    /// the checkpoint take precedence over `config.adam`.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut model = Model::build(&ckpt.spec)?;
        model.load_state(ckpt.params, ckpt.bn)?;
        config.validate(ckpt.spec.num_classes)?;
        if ckpt.adam.moments.len() != model.params().len() || ckpt.adam.moments.keys().ne(model.params().keys()) {
            return Err(Error::State("optimizer state does not match the model parameters".into()));
        }
        let config = TrainConfig { adam: ckpt.adam.config, ..config };
        Ok(Trainer { model, adam: ckpt.adam, history: ckpt.history, config, rng: RngStream::from_state(ckpt.rng) })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.model.spec().clone(),
            params: self.model.params().clone(),
            bn: self.model.bn_states().clone(),
            adam: self.adam.clone(),
            rng: self.rng.state(),
            history: self.history.clone(),
        }
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn step(&mut self, images: &Tensor<f32>, labels: &LabelTensor) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let f = self.model.forward(&mut tape, x, Mode::Train, &mut self.rng)?;
        let loss = match self.config.loss {
            LossKind::BinaryCe => {
                let s1 = tape.select_channel(f.probs, 0)?;
                tape.binary_cross_entropy(s1, labels)?
            }
            LossKind::CategoricalCe => tape.softmax_cross_entropy(f.logits, labels)?,
        };
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        let mut grads = tape.backward(loss)?;
        let mut named = IndexMap::with_capacity(f.params.len());
        for (name, v) in f.params {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(self.model.params()[&name].shape()));
            named.insert(name, g);
        }
        adam_step(&mut self.adam, &named, self.model.params_mut())?;
        Ok(value)
    }

    /// Runs one epoch and appends its History entry.
    pub fn run_epoch(&mut self, data: &SampleSet) -> Result<&HistoryEntry> {
        let train = data.train();
        let val = data.validation();
        if train.is_empty() || val.is_empty() {
            return Err(Error::config("both splits must be non-empty"));
        }
        let start = Instant::now();
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngStream::substream(self.config.seed, epoch as u64).shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let scenes: Vec<&Scene> = chunk.iter().map(|&i| train[i]).collect();
            let (x, y) = batch(&scenes)?;
            let loss = self.step(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1, loss });
            }
            total += loss * scenes.len() as f64;
            seen += scenes.len();
        }
        let last = epoch >= self.config.epochs;
        let (train_m, val_m) = if self.config.eval_every_epoch || last {
            let bs = self.config.batch_size;
            let nc = self.model.spec().num_classes;
            (
                Some(evaluate(&self.model, &train, nc, bs)?.1),
                Some(evaluate(&self.model, &val, nc, bs)?.1),
            )
        } else {
            (None, None)
        };
        let nan = f64::NAN;
        self.history.push(HistoryEntry {
            epoch,
            loss: total / seen as f64,
            train_acc: train_m.as_ref().map_or(nan, |m| m.pixel_acc),
            train_miou: train_m.as_ref().map_or(nan, |m| m.mean_iou),
            val_acc: val_m.as_ref().map_or(nan, |m| m.pixel_acc),
            val_miou: val_m.as_ref().map_or(nan, |m| m.mean_iou),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Trains until `config.epochs` epochs are done in total, calling
    /// `callback` after each one.
    pub fn run(&mut self, data: &SampleSet, mut callback: impl FnMut(&HistoryEntry)) -> Result<()> {
        check_data(self.model.spec(), data)?;
        while self.history.len() < self.config.epochs {
            let entry = self.run_epoch(data)?;
            callback(entry);
        }
        Ok(())
    }
}

fn check_data(spec: &ModelSpec, data: &SampleSet) -> Result<()> {
    for s in &data.scenes {
        if s.height() != spec.input_height || s.width() != spec.input_width || s.channels() != spec.input_channels {
            return Err(Error::dim(format!(
                "scene {} is {:?}, model expects [{},{},{}]",
                s.provenance,
                s.image.shape(),
                spec.input_height,
                spec.input_width,
                spec.input_channels
            )));
        }
        s.mask.validate(spec.num_classes)?;
    }
    Ok(())
}

/// Builds the model from `spec` and trains it from scratch.
pub fn train(
    spec: &ModelSpec,
    data: &SampleSet,
    config: &TrainConfig,
    callback: impl FnMut(&HistoryEntry),
) -> Result<(Checkpoint, History)> {
    let mut trainer = Trainer::new(Model::build(spec)?, config.clone())?;
    trainer.run(data, callback)?;
    Ok((trainer.checkpoint(), trainer.history.clone()))
}

/// Infer-mode confusion counts and report over `scenes`.
pub fn evaluate(
    model: &Model<f32>,
    scenes: &[&Scene],
    num_classes: usize,
    batch_size: usize,
) -> Result<(ConfusionCounts, MetricsReport)> {
    let mut counts = ConfusionCounts::new(num_classes);
    for chunk in scenes.chunks(batch_size.max(1)) {
        let (x, y) = batch(chunk)?;
        let pred = argmax(&model.predict(&x)?)?;
        counts.merge(&confusion(&pred, &y, num_classes)?);
    }
    let report = metrics_report(&counts);
    Ok((counts, report))
}

pub struct ScenePrediction {
    /// `[1, H, W]` class ids.
    pub mask: LabelTensor,
    /// `[H, W, num_classes]`.
    pub probs: Tensor<f32>,
}

/// Tiles an `[H, W, C]` image at the model's input size, predicts each tile
/// and stitches masks and probabilities with the last-writer rule.
pub fn predict_scene(model: &Model<f32>, image: &Tensor<u8>, overlap: usize) -> Result<ScenePrediction> {
    let spec = model.spec();
    let (th, tw) = (spec.input_height, spec.input_width);
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::dim(format!("image must be [H,W,C], got {:?}", image.shape()))),
    };
    if h < th || w < tw {
        return Err(Error::config(format!("image {}x{} is smaller than the {}x{} tile", h, w, th, tw)));
    }
    if c != spec.input_channels {
        return Err(Error::dim(format!("image has {} bands, model expects {}", c, spec.input_channels)));
    }
    let rows = tile_origins(h, th, overlap)?;
    let cols = tile_origins(w, tw, overlap)?;
    let mut probs = vec![];
    let mut masks = vec![];
    for &r in &rows {
        for &col in &cols {
            let tile = to_unit(&crop(image, r, col, th, tw)?).reshape(&[1, th, tw, c])?;
            let p = model.predict(&tile)?;
            let m = argmax(&p)?;
            probs.push(((r, col), p.reshape(&[th, tw, spec.num_classes])?));
            masks.push(((r, col), Tensor::new(&[th, tw, 1], m.data().to_vec())?));
        }
    }
    let prob_refs: Vec<_> = probs.iter().map(|(o, t)| (*o, t)).collect();
    let mask_refs: Vec<_> = masks.iter().map(|(o, t)| (*o, t)).collect();
    let probs = stitch(&prob_refs, h, w)?;
    let mask = stitch(&mask_refs, h, w)?;
    Ok(ScenePrediction { mask: LabelTensor::new([1, h, w], mask.into_data())?, probs })
}
