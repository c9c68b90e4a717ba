use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            _ => None,
        }
    }
}

/// Scenes with a split assignment each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub scenes: Vec<Scene>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn part(&self, which: Split) -> Vec<&Scene> {
        self.scenes
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(sc, _)| sc)
            .collect()
    }

    pub fn train(&self) -> Vec<&Scene> {
        self.part(Split::Train)
    }

    pub fn validation(&self) -> Vec<&Scene> {
        self.part(Split::Validation)
    }
}

/// Shuffles scene indices with `seed` and sends the first
/// `floor(num / den * n)` to training, the rest to validation. Scene order
/// is kept; only the assignment is shuffled.
pub fn split_dataset(scenes: Vec<Scene>, ratio: (usize, usize), seed: u64) -> Result<SampleSet> {
    let n = scenes.len();
    if n < 2 {
        return Err(Error::config(format!("need at least 2 scenes to split, got {}", n)));
    }
    let (num, den) = ratio;
    if den == 0 || num == 0 || num >= den {
        return Err(Error::config(format!("split ratio {}/{} must lie strictly between 0 and 1", num, den)));
    }
    let n_train = num * n / den;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!("a {}/{} split of {} scenes leaves a side empty", num, den, n)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed).shuffle(&mut order);
    let mut splits = vec![Split::Validation; n];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    Ok(SampleSet { scenes, splits, seed })
}
