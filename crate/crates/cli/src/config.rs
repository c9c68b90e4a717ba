//! `key = value` run configuration files.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use segnet::architectures::{ModelKind, ModelSpec};
use segnet::datakit::Task;
use segnet::engine::{LossKind, TrainConfig};
use segnet::optimizer::AdamConfig;
use segnet::{Error, Result};

pub const KEYS: [&str; 17] = [
    "task",
    "model",
    "input_size",
    "input_channels",
    "num_classes",
    "width_multiplier",
    "dropout",
    "loss",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
    "data_root",
    "out_dir",
];

/// Raw settings, in file order after flag overrides have been applied.
/// Values stay strings until [`RunConfig::resolve`] so that every problem
/// can be reported at once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: Vec<(String, String)>,
}

/// A fully typed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub task: Task,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut problems = vec![];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected 'key = value'", n + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                problems.push(format!("line {}: unknown key '{}'", n + 1, k));
            } else if cfg.get(k).is_some() {
                problems.push(format!("line {}: duplicate key '{}'", n + 1, k));
            } else {
                cfg.values.push((k.to_string(), v.to_string()));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Sets `key`, replacing any value from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        assert!(KEYS.contains(&key), "unknown key {}", key);
        let value = value.into();
        match self.values.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.values.push((key.to_string(), value)),
        }
    }

    /// Types every value and checks that `required` keys are present.
    /// Missing keys and malformed values are gathered into one error.
    pub fn resolve(&self, required: &[&str]) -> Result<Resolved> {
        let missing: Vec<&str> = required.iter().copied().filter(|k| self.get(k).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
        }
        let mut bad = String::new();
        let task: Task = self.typed("task", Task::Buildings, &mut bad);
        let kind: ModelKind = self.typed("model", ModelKind::ModifiedUnet, &mut bad);
        let size: usize = self.typed("input_size", 512, &mut bad);
        let channels = self.typed("input_channels", task.default_channels(), &mut bad);
        let classes = self.typed("num_classes", task.num_classes(), &mut bad);
        let default_loss = if classes == 2 { LossKind::BinaryCe } else { LossKind::CategoricalCe };
        let defaults = TrainConfig::default();
        let adam = AdamConfig {
            lr: self.typed("lr", defaults.adam.lr, &mut bad),
            beta1: self.typed("beta1", defaults.adam.beta1, &mut bad),
            beta2: self.typed("beta2", defaults.adam.beta2, &mut bad),
            epsilon: self.typed("epsilon", defaults.adam.epsilon, &mut bad),
        };
        let seed = self.typed("seed", 0u64, &mut bad);
        let train = TrainConfig {
            epochs: self.typed("epochs", defaults.epochs, &mut bad),
            batch_size: self.typed("batch_size", defaults.batch_size, &mut bad),
            adam,
            loss: self.typed("loss", default_loss, &mut bad),
            seed,
            ..defaults
        };
        let spec = ModelSpec::new(kind, size, size, channels, classes)
            .with_width(self.typed("width_multiplier", 1.0, &mut bad))
            .with_dropout(self.typed("dropout", 0.5, &mut bad))
            .with_seed(seed);
        if !bad.is_empty() {
            return Err(Error::Config(bad.trim_end_matches("; ").to_string()));
        }
        spec.validate()?;
        train.validate(classes)?;
        Ok(Resolved {
            task,
            spec,
            train,
            data_root: self.get("data_root").map(PathBuf::from),
            out_dir: self.get("out_dir").map(PathBuf::from),
        })
    }

    fn typed<T: FromStr>(&self, key: &str, default: T, bad: &mut String) -> T {
        match self.get(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                write!(bad, "{} = '{}' is not valid; ", key, v).unwrap();
                default
            }),
        }
    }
}
