//! Non-convolutional primitive kernels: pooling, activations, normalization,
//! dropout, concatenation and the dense map.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Batch-norm numerical guard added to the variance.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Non-overlapping `window x window` max pooling. Returns the pooled tensor
/// and, per output value, the flat input index of the maximum. Ties resolve
/// to the first maximum in row-major scan order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, h, w, c] = input.dims4()?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::dim(format!(
            "maxpool2d window {} does not divide spatial dims {}x{}",
            window, h, w
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + oy * window) * w + ox * window) * c + ch;
                    let mut best = x[best_idx];
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = ((b * h + oy * window + dy) * w + ox * window + dx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    Ok((Tensor::new(&[n, oh, ow, c], out)?, argmax))
}

/// Routes each upstream gradient to its recorded argmax position.
pub fn maxpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] += g;
    }
    dx
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU derivative, taken as 0 at exactly 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    /// False until the first training-mode batch has been seen.
    pub populated: bool,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            populated: false,
        }
    }

    /// The first update copies the batch statistics; later ones blend them
    /// in with weight `1 - BN_MOMENTUM`.
    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let keep = if self.populated { BN_MOMENTUM } else { 0.0 };
        for (r, &m) in self.mean.data_mut().iter_mut().zip(mean) {
            *r = T::from_f64(keep * r.as_f64() + (1.0 - keep) * m);
        }
        for (r, &v) in self.var.data_mut().iter_mut().zip(var) {
            *r = T::from_f64(keep * r.as_f64() + (1.0 - keep) * v);
        }
        self.populated = true;
    }
}

/// Values saved by a batch-norm forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormSaved<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Whether the statistics came from the batch (train) or the running state.
    pub batch_stats: bool,
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(format!(
            "batchnorm2d gamma/beta must be [{}], got {:?} and {:?}",
            c,
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Batch normalization over `N*H*W` per channel. Train mode normalizes with
/// batch statistics and folds them into `state`; infer mode uses `state` only.
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: Mode,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    match mode {
        Mode::Train => batchnorm2d_train(input, gamma, beta, state),
        Mode::Infer => batchnorm2d_infer(input, gamma, beta, state),
    }
}

fn check_state<T: Scalar>(c: usize, state: &BatchNormState<T>) -> Result<()> {
    if state.mean.shape() != [c] {
        return Err(Error::dim(format!(
            "batchnorm2d running state has {} channels, input has {}",
            state.mean.len(),
            c
        )));
    }
    Ok(())
}

pub fn batchnorm2d_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let [_, _, _, c] = input.dims4()?;
    check_affine(c, gamma, beta)?;
    check_state(c, state)?;
    let x = input.data();
    let count = (x.len() / c) as f64;
    let mut sum = vec![0.0f64; c];
    for px in x.chunks_exact(c) {
        for (s, &v) in sum.iter_mut().zip(px) {
            *s += v.as_f64();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; c];
    for px in x.chunks_exact(c) {
        for ((s, &v), &m) in sq.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    let var: Vec<f64> = sq.iter().map(|s| s / count).collect();
    state.update(&mean, &var);
    normalize(input, gamma, beta, &mean, &var, true)
}

pub fn batchnorm2d_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let [_, _, _, c] = input.dims4()?;
    check_affine(c, gamma, beta)?;
    check_state(c, state)?;
    if !state.populated {
        return Err(Error::State(
            "batchnorm2d in infer mode needs populated running statistics".into(),
        ));
    }
    let mean: Vec<f64> = state.mean.data().iter().map(|v| v.as_f64()).collect();
    let var: Vec<f64> = state.var.data().iter().map(|v| v.as_f64()).collect();
    normalize(input, gamma, beta, &mean, &var, false)
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    var: &[f64],
    batch_stats: bool,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let c = gamma.len();
    let x = input.data();
    let inv_std: Vec<T> = var
        .iter()
        .map(|v| T::from_f64(1.0 / (v + BN_EPSILON).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (g, b) = (gamma.data(), beta.data());
    for px in x.chunks_exact(c) {
        for ch in 0..c {
            let xh = (px[ch] - mean_t[ch]) * inv_std[ch];
            normalized.push(xh);
            out.push(g[ch] * xh + b[ch]);
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BatchNormSaved {
            normalized: Tensor::new(input.shape(), normalized)?,
            inv_std,
            batch_stats,
        },
    ))
}

/// Returns gradients for input, gamma and beta.
pub fn batchnorm2d_backward<T: Scalar>(
    saved: &BatchNormSaved<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let xh = saved.normalized.data();
    let dy = grad_out.data();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (pd, px) in dy.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for ch in 0..c {
            let d = pd[ch].as_f64();
            dbeta[ch] += d;
            dgamma[ch] += d * px[ch].as_f64();
        }
    }
    let g = gamma.data();
    let mut dx = Vec::with_capacity(dy.len());
    if saved.batch_stats {
        let m = (dy.len() / c) as f64;
        // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
        let coef: Vec<f64> = (0..c)
            .map(|ch| g[ch].as_f64() * saved.inv_std[ch].as_f64() / m)
            .collect();
        for (pd, px) in dy.chunks_exact(c).zip(xh.chunks_exact(c)) {
            for ch in 0..c {
                let v = coef[ch]
                    * (m * pd[ch].as_f64() - dbeta[ch] - px[ch].as_f64() * dgamma[ch]);
                dx.push(T::from_f64(v));
            }
        }
    } else {
        for pd in dy.chunks_exact(c) {
            for ch in 0..c {
                dx.push(pd[ch] * g[ch] * saved.inv_std[ch]);
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::new(&[c], v.into_iter().map(T::from_f64).collect()).unwrap();
    (
        Tensor::new(grad_out.shape(), dx).unwrap(),
        to_t(dgamma),
        to_t(dbeta),
    )
}

/// Inverted dropout. In train mode each value is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; the applied scale mask is
/// returned for the backward pass. Infer mode, and rate 0, are the identity.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must lie in [0, 1), got {}",
            rate
        )));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape(), out)?, Some(mask)))
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, ca] = a.dims4()?;
    let [nb, hb, wb, cb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::dim(format!(
            "concat_channels needs equal N,H,W: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::new(&[n, h, w, ca + cb], out)
}

/// Splits a channel-concatenated tensor back into `[.., ..ca]` and `[.., ca..]`.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, h, w, c] = x.dims4()?;
    if ca == 0 || ca >= c {
        return Err(Error::dim(format!(
            "cannot split {} channels at {}",
            c, ca
        )));
    }
    let cb = c - ca;
    let mut a = Vec::with_capacity(n * h * w * ca);
    let mut b = Vec::with_capacity(n * h * w * cb);
    for px in x.data().chunks_exact(c) {
        a.extend_from_slice(&px[..ca]);
        b.extend_from_slice(&px[ca..]);
    }
    Ok((
        Tensor::new(&[n, h, w, ca], a)?,
        Tensor::new(&[n, h, w, cb], b)?,
    ))
}

/// Per-pixel softmax over the last axis, with max subtraction.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *input.shape().last().unwrap();
    if c < 2 {
        return Err(Error::dim(format!(
            "softmax_channels needs at least 2 channels, got {}",
            c
        )));
    }
    let mut out = Vec::with_capacity(input.len());
    for px in input.data().chunks_exact(c) {
        let max = px.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in px {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    Tensor::new(input.shape(), out)
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_channels_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let c = *probs.shape().last().unwrap();
    let mut dx = Vec::with_capacity(probs.len());
    for (s, g) in probs.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(s.iter().zip(g).map(|(&si, &gi)| si * (gi - dot)));
    }
    Tensor::new(probs.shape(), dx).unwrap()
}

/// Extracts channel `channel` of the last axis, keeping it as a size-1 axis.
pub fn select_channel<T: Scalar>(input: &Tensor<T>, channel: usize) -> Result<Tensor<T>> {
    let c = *input.shape().last().unwrap();
    if channel >= c {
        return Err(Error::dim(format!(
            "channel {} out of range for {} channels",
            channel, c
        )));
    }
    let data = input.data().chunks_exact(c).map(|px| px[channel]).collect();
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = 1;
    Tensor::new(&shape, data)
}

/// `[N,D] x [D,M] + [M]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = dense_dims(input, weights, bias)?;
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(
        MatRef::new(input.data(), n, d),
        MatRef::new(weights.data(), d, m),
        &mut out,
        true,
    );
    Tensor::new(&[n, m], out)
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[1];
    let dy = MatRef::new(grad_out.data(), n, m);
    let mut dx = vec![T::zero(); n * d];
    gemm(dy, MatRef::new(weights.data(), d, m).t(), &mut dx, false);
    let mut dw = vec![T::zero(); d * m];
    gemm(MatRef::new(input.data(), n, d).t(), dy, &mut dw, false);
    let mut db = vec![T::zero(); m];
    for row in grad_out.data().chunks_exact(m) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    (
        Tensor::new(&[n, d], dx).unwrap(),
        Tensor::new(&[d, m], dw).unwrap(),
        Tensor::new(&[m], db).unwrap(),
    )
}

fn dense_dims<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (n, d) = match input.shape() {
        &[n, d] => (n, d),
        s => return Err(Error::dim(format!("dense input must be [N,D], got {:?}", s))),
    };
    let (wd, m) = match weights.shape() {
        &[wd, m] => (wd, m),
        s => return Err(Error::dim(format!("dense weights must be [D,M], got {:?}", s))),
    };
    if wd != d {
        return Err(Error::dim(format!(
            "dense inner dims differ: input axis 1 is {}, weights axis 0 is {}",
            d, wd
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::dim(format!(
            "dense bias must be [{}], got {:?}",
            m,
            bias.shape()
        )));
    }
    Ok((n, d, m))
}
