//! Confusion counts, Jaccard index and difference maps.

use std::fmt;

use super::LabelTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-class pixel tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            tn: vec![0; num_classes],
            total: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds another tally of the same class count.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.num_classes(), other.num_classes());
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
            self.tn[c] += other.tn[c];
        }
        self.total += other.total;
    }

    /// True when the class never occurs in the ground truth and is never
    /// predicted.
    pub fn is_absent(&self, class: usize) -> bool {
        self.tp[class] == 0 && self.fp[class] == 0 && self.fn_[class] == 0
    }

    pub fn correct(&self) -> u64 {
        self.tp.iter().sum()
    }
}

/// Tallies TP/FP/FN/TN per class for predicted vs ground-truth ids.
pub fn confusion(pred: &LabelTensor, gt: &LabelTensor, num_classes: usize) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    pred.validate(num_classes)?;
    gt.validate(num_classes)?;
    // matrix[gt][pred]
    let mut matrix = vec![0u64; num_classes * num_classes];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        matrix[g as usize * num_classes + p as usize] += 1;
    }
    let total = pred.len() as u64;
    let mut counts = ConfusionCounts::new(num_classes);
    counts.total = total;
    for c in 0..num_classes {
        let tp = matrix[c * num_classes + c];
        let gt_c: u64 = matrix[c * num_classes..(c + 1) * num_classes].iter().sum();
        let pred_c: u64 = (0..num_classes).map(|g| matrix[g * num_classes + c]).sum();
        counts.tp[c] = tp;
        counts.fn_[c] = gt_c - tp;
        counts.fp[c] = pred_c - tp;
        counts.tn[c] = total + tp - gt_c - pred_c;
    }
    Ok(counts)
}

/// `TP / (TP + FN + FP)`, or 1.0 for a class that is absent from both masks.
pub fn jaccard_index(counts: &ConfusionCounts, class_id: usize) -> f64 {
    let (tp, fp, fn_) = (counts.tp[class_id], counts.fp[class_id], counts.fn_[class_id]);
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Grayscale agreement mask: 0 where `pred == gt`, 255 elsewhere.
pub fn diff_map(pred: &LabelTensor, gt: &LabelTensor) -> Result<Tensor<u8>> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "diff_map needs equal shapes, got {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let data = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| if p == g { 0 } else { 255 })
        .collect();
    Tensor::new(&pred.shape(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Set when the class is absent from both masks and its IoU is the
    /// conventional 1.0.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean IoU over the classes that are not absent.
    pub mean_iou: f64,
    pub pixel_acc: f64,
}

impl MetricsReport {
    /// Line-oriented form: one `class=` line per class, then `mean_iou=` and
    /// `pixel_acc=`.
    pub fn to_machine(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            out.push_str(&format!(
                "class={} iou={:.6} tp={} fp={} fn={}\n",
                c.class, c.iou, c.tp, c.fp, c.fn_
            ));
        }
        out.push_str(&format!("mean_iou={:.6}\n", self.mean_iou));
        out.push_str(&format!("pixel_acc={:.6}\n", self.pixel_acc));
        out
    }

    pub fn class_iou(&self, class: usize) -> f64 {
        self.classes[class].iou
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5}  {:>8}  {:>10}  {:>10}  {:>10}", "class", "IoU", "TP", "FP", "FN")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:>5}  {:>8.4}  {:>10}  {:>10}  {:>10}{}",
                c.class,
                c.iou,
                c.tp,
                c.fp,
                c.fn_,
                if c.absent { "  (absent)" } else { "" }
            )?;
        }
        writeln!(f, "mean IoU:       {:.4}", self.mean_iou)?;
        write!(f, "pixel accuracy: {:.4}", self.pixel_acc)
    }
}

pub fn metrics_report(counts: &ConfusionCounts) -> MetricsReport {
    let classes: Vec<ClassMetrics> = (0..counts.num_classes())
        .map(|c| ClassMetrics {
            class: c,
            iou: jaccard_index(counts, c),
            tp: counts.tp[c],
            fp: counts.fp[c],
            fn_: counts.fn_[c],
            absent: counts.is_absent(c),
        })
        .collect();
    let present: Vec<f64> = classes.iter().filter(|c| !c.absent).map(|c| c.iou).collect();
    let mean_iou = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let pixel_acc = if counts.total == 0 {
        1.0
    } else {
        counts.correct() as f64 / counts.total as f64
    };
    MetricsReport {
        classes,
        mean_iou,
        pixel_acc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(h: usize, w: usize, data: &[u8]) -> LabelTensor {
        LabelTensor::new([1, h, w], data.to_vec()).unwrap()
    }

    #[test]
    fn jaccard_formula() {
        let mut c = ConfusionCounts::new(1);
        c.tp[0] = 3;
        c.fp[0] = 1;
        c.fn_[0] = 1;
        assert_eq!(jaccard_index(&c, 0), 0.6);
    }

    #[test]
    fn zero_tp_with_errors_is_zero() {
        let mut c = ConfusionCounts::new(1);
        c.fp[0] = 2;
        assert_eq!(jaccard_index(&c, 0), 0.0);
    }

    #[test]
    fn identical_masks_have_no_errors() {
        let a = labels(2, 3, &[0, 1, 2, 2, 1, 0]);
        let c = confusion(&a, &a, 3).unwrap();
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
        let r = metrics_report(&c);
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.pixel_acc, 1.0);
        assert!(r.classes.iter().all(|m| m.iou == 1.0));
    }

    #[test]
    fn disjoint_single_class_images() {
        let a = labels(2, 2, &[0; 4]);
        let b = labels(2, 2, &[1; 4]);
        let c = confusion(&a, &b, 2).unwrap();
        assert_eq!(c.tp, vec![0, 0]);
        assert_eq!(metrics_report(&c).mean_iou, 0.0);
    }

    #[test]
    fn absent_class_reported_as_one_and_flagged() {
        let a = labels(2, 2, &[1; 4]);
        let r = metrics_report(&confusion(&a, &a, 3).unwrap());
        assert_eq!(r.classes[1].iou, 1.0);
        assert!(r.classes[0].absent && r.classes[2].absent && !r.classes[1].absent);
        assert_eq!(r.classes[0].iou, 1.0);
        assert!(r.to_string().contains("(absent)"));
    }

    #[test]
    fn counts_partition_the_pixels() {
        let a = labels(2, 3, &[0, 1, 2, 2, 1, 0]);
        let b = labels(2, 3, &[0, 2, 2, 1, 1, 1]);
        let c = confusion(&a, &b, 3).unwrap();
        for k in 0..3 {
            assert_eq!(c.tp[k] + c.fp[k] + c.fn_[k] + c.tn[k], 6);
        }
        assert_eq!(c.tp.iter().zip(&c.fn_).map(|(a, b)| a + b).sum::<u64>(), 6);
    }

    #[test]
    fn machine_report_lines() {
        let a = labels(1, 2, &[0, 1]);
        let b = labels(1, 2, &[0, 0]);
        let text = metrics_report(&confusion(&a, &b, 2).unwrap()).to_machine();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class=0 iou=0.500000 tp=1 fp=0 fn=1");
        assert_eq!(lines[1], "class=1 iou=0.000000 tp=0 fp=1 fn=0");
        assert_eq!(lines[2], "mean_iou=0.250000");
        assert_eq!(lines[3], "pixel_acc=0.500000");
    }

    #[test]
    fn diff_map_examples() {
        let a = labels(2, 2, &[0, 1, 1, 0]);
        assert!(diff_map(&a, &a).unwrap().data().iter().all(|&v| v == 0));
        let inv = labels(2, 2, &[1, 0, 0, 1]);
        assert!(diff_map(&a, &inv).unwrap().data().iter().all(|&v| v == 255));
        assert!(diff_map(&a, &labels(1, 4, &[0; 4])).is_err());
    }
}
