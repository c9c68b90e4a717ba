//! Cross-entropy losses with mean-over-pixels reduction.

use super::LabelTensor;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// NaN passes through so that a diverged network shows up in the loss.
fn clamped_ln(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(LOG_CLAMP).ln()
    }
}

fn check_pair<T: Scalar>(scores: &Tensor<T>, targets: &LabelTensor) -> Result<usize> {
    let [n, h, w, c] = scores.dims4()?;
    if targets.shape() != [n, h, w] {
        return Err(Error::dim(format!(
            "scores {:?} and targets {:?} disagree on N,H,W",
            scores.shape(),
            targets.shape()
        )));
    }
    targets.validate(c)?;
    Ok(c)
}

/// Mean over pixels of `-sum_i t_i ln(s_i)` with one-hot targets.
///
/// `scores` are softmax probabilities `[N,H,W,C]`. Returns the loss and its
/// gradient with respect to the pre-softmax logits, `(s - t) / pixels`.
pub fn categorical_cross_entropy<T: Scalar>(
    scores: &Tensor<T>,
    targets: &LabelTensor,
) -> Result<(f64, Tensor<T>)> {
    let c = check_pair(scores, targets)?;
    let pixels = targets.len() as f64;
    let inv = T::from_f64(1.0 / pixels);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (px, &t) in scores.data().chunks_exact(c).zip(targets.data()) {
        total -= clamped_ln(px[t as usize].as_f64());
        for (i, &s) in px.iter().enumerate() {
            let onehot = if i == t as usize { T::one() } else { T::zero() };
            grad.push((s - onehot) * inv);
        }
    }
    Ok((total / pixels, Tensor::new(scores.shape(), grad)?))
}

/// Binary cross-entropy `-t1 ln(s1) - (1-t1) ln(1-s1)`, averaged over pixels.
///
/// `s1` is the probability of class 0 (the object class under the label
/// conventions used throughout) shaped `[N,H,W,1]` or `[N,H,W]`; `t1` is 1
/// where the target is class 0. Returns the loss and `d loss / d s1`.
pub fn binary_cross_entropy<T: Scalar>(
    s1: &Tensor<T>,
    targets: &LabelTensor,
) -> Result<(f64, Tensor<T>)> {
    let [n, h, w] = targets.shape();
    let ok = match s1.shape() {
        [a, b, c, 1] | [a, b, c] => [*a, *b, *c] == [n, h, w],
        _ => false,
    };
    if !ok {
        return Err(Error::dim(format!(
            "binary_cross_entropy score shape {:?} does not match targets {:?}",
            s1.shape(),
            targets.shape()
        )));
    }
    targets.validate(2)?;
    let pixels = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(s1.len());
    for (&s, &t) in s1.data().iter().zip(targets.data()) {
        let s = s.as_f64();
        let q = 1.0 - s;
        let g = if t == 0 {
            total -= clamped_ln(s);
            if s > LOG_CLAMP {
                -1.0 / s
            } else {
                0.0
            }
        } else {
            total -= clamped_ln(q);
            if q > LOG_CLAMP {
                1.0 / q
            } else {
                0.0
            }
        };
        grad.push(T::from_f64(g / pixels));
    }
    Ok((total / pixels, Tensor::new(s1.shape(), grad)?))
}
