//! Losses and evaluation metrics.

mod labels;
pub mod loss;
pub mod metrics;

pub use labels::{argmax, LabelTensor};
pub use loss::{binary_cross_entropy, categorical_cross_entropy};
pub use metrics::{
    confusion, diff_map, jaccard_index, metrics_report, ClassMetrics, ConfusionCounts, MetricsReport,
};

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::autodiff::{grad_check, softmax_channels};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn mask(n: usize, classes: u8) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0..classes, n)
    }

    proptest! {
        #[test]
        fn binary_equals_categorical_for_two_classes(
            logits in prop::collection::vec(-8.0f64..8.0, 2 * 12),
            labels in mask(12, 2),
        ) {
            let logits = Tensor::new(&[1, 3, 4, 2], logits).unwrap();
            let probs = softmax_channels(&logits).unwrap();
            let targets = LabelTensor::new([1, 3, 4], labels).unwrap();
            let (cce, _) = categorical_cross_entropy(&probs, &targets).unwrap();
            let s1 = crate::autodiff::select_channel(&probs, 0).unwrap();
            let (bce, _) = binary_cross_entropy(&s1, &targets).unwrap();
            prop_assert!((cce - bce).abs() < 1e-9);
        }

        #[test]
        fn loss_is_non_negative(
            logits in prop::collection::vec(-5.0f64..5.0, 3 * 6),
            labels in mask(6, 3),
        ) {
            let probs = softmax_channels(&Tensor::new(&[1, 2, 3, 3], logits).unwrap()).unwrap();
            let (l, _) = categorical_cross_entropy(&probs, &LabelTensor::new([1, 2, 3], labels).unwrap()).unwrap();
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn fused_gradient_matches_finite_differences(
            logits in prop::collection::vec(-3.0f64..3.0, 3 * 4),
            labels in mask(4, 3),
        ) {
            let logits = Tensor::new(&[1, 2, 2, 3], logits).unwrap();
            let targets = LabelTensor::new([1, 2, 2], labels).unwrap();
            let err = grad_check(|t, v| t.softmax_cross_entropy(v, &targets), &logits, 1e-5).unwrap();
            prop_assert!(err < 1e-6);
        }

        #[test]
        fn jaccard_invariant_under_relabeling(
            a in mask(64, 4),
            b in mask(64, 4),
            perm in Just([0u8, 1, 2, 3]).prop_shuffle(),
        ) {
            let pa = LabelTensor::new([1, 8, 8], a.clone()).unwrap();
            let pb = LabelTensor::new([1, 8, 8], b.clone()).unwrap();
            let qa = LabelTensor::new([1, 8, 8], a.iter().map(|&v| perm[v as usize]).collect()).unwrap();
            let qb = LabelTensor::new([1, 8, 8], b.iter().map(|&v| perm[v as usize]).collect()).unwrap();
            let c1 = confusion(&pa, &pb, 4).unwrap();
            let c2 = confusion(&qa, &qb, 4).unwrap();
            for k in 0..4 {
                prop_assert_eq!(jaccard_index(&c1, k), jaccard_index(&c2, perm[k] as usize));
            }
        }

        #[test]
        fn mean_iou_is_one_iff_equal(a in mask(36, 3), b in mask(36, 3)) {
            let pa = LabelTensor::new([1, 6, 6], a.clone()).unwrap();
            let pb = LabelTensor::new([1, 6, 6], b.clone()).unwrap();
            let r = metrics_report(&confusion(&pa, &pb, 3).unwrap());
            prop_assert!((0.0..=1.0).contains(&r.mean_iou));
            prop_assert_eq!(r.mean_iou == 1.0, a == b);
        }

        #[test]
        fn diff_map_counts_disagreements(a in mask(49, 2), b in mask(49, 2)) {
            let pa = LabelTensor::new([1, 7, 7], a.clone()).unwrap();
            let pb = LabelTensor::new([1, 7, 7], b.clone()).unwrap();
            let d = diff_map(&pa, &pb).unwrap();
            let nonzero = d.data().iter().filter(|&&v| v != 0).count() as u64;
            let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u64;
            prop_assert_eq!(nonzero, mismatches);
            let c = confusion(&pa, &pb, 2).unwrap();
            prop_assert_eq!(nonzero, (c.fp.iter().sum::<u64>() + c.fn_.iter().sum::<u64>()) / 2);
        }
    }
}
