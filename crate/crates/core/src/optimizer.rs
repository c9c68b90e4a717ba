//! Adam with bias-corrected moments over named parameter tensors.
//!
//! Defaults are lr 1e-3, β₁ 0.9, β₂ 0.999, ε 1e-8. There is no weight decay,
//! clipping or learning-rate schedule.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{tnsr, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam settings {:?}", self)))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub t: u64,
    pub moments: IndexMap<String, Moments<T>>,
}

/// Zero moments shaped like each parameter, t = 0.
pub fn adam_init<T: Scalar>(params: &IndexMap<String, Tensor<T>>, config: AdamConfig) -> AdamState<T> {
    let moments = params
        .iter()
        .map(|(name, p)| {
            let zero = Tensor::zeros(p.shape());
            (name.clone(), Moments { m: zero.clone(), v: zero })
        })
        .collect();
    AdamState { config, t: 0, moments }
}

/// One Adam update of `params` in place.
///
/// Every parameter needs a gradient of the same shape. The state and the
/// parameters are left untouched when any check fails.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    grads: &IndexMap<String, Tensor<T>>,
    params: &mut IndexMap<String, Tensor<T>>,
) -> Result<()> {
    if params.len() != state.moments.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} parameters, model has {}",
            state.moments.len(),
            params.len()
        )));
    }
    for (name, p) in params.iter() {
        let mo = state
            .moments
            .get(name)
            .ok_or_else(|| Error::State(format!("optimizer has no moments for '{}'", name)))?;
        let g = grads
            .get(name)
            .ok_or_else(|| Error::State(format!("missing gradient for '{}'", name)))?;
        if g.shape() != p.shape() || mo.m.shape() != p.shape() {
            return Err(Error::dim(format!(
                "gradient for '{}' has shape {:?}, parameter has {:?}",
                name,
                g.shape(),
                p.shape()
            )));
        }
    }

    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let one = T::one();
    let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
    let lr = T::from_f64(c.lr);
    let eps = T::from_f64(c.epsilon);
    for (name, p) in params.iter_mut() {
        let mo = state.moments.get_mut(name).expect("checked above");
        let g = &grads[name];
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

impl<T: Scalar> AdamState<T> {
    /// Appends the state to `out`: t, the four hyperparameters as f64, the
    /// parameter count, then for each parameter a length-prefixed name and
    /// two TNSR blocks (m, v). All integers little-endian.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.t.to_le_bytes());
        for x in [self.config.lr, self.config.beta1, self.config.beta2, self.config.epsilon] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for (name, mo) in &self.moments {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            tnsr::encode(&mo.m, out);
            tnsr::encode(&mo.v, out);
        }
    }

    /// Inverse of [`AdamState::encode`]. `base` is the absolute offset of
    /// `bytes` in its file, used in error messages.
    pub fn decode(bytes: &[u8], base: usize) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0, base };
        let t = u64::from_le_bytes(r.take::<8>()?);
        let mut h = [0.0; 4];
        for x in &mut h {
            *x = f64::from_le_bytes(r.take::<8>()?);
        }
        let config = AdamConfig { lr: h[0], beta1: h[1], beta2: h[2], epsilon: h[3] };
        let count = u32::from_le_bytes(r.take::<4>()?) as usize;
        let mut moments = IndexMap::with_capacity(count);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take::<2>()?) as usize;
            let at = r.pos;
            let raw = r.slice(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::format(base + at, "parameter name is not UTF-8"))?
                .to_string();
            let (m, used) = tnsr::decode::<T>(&bytes[r.pos..], base + r.pos)?;
            r.pos += used;
            let (v, used) = tnsr::decode::<T>(&bytes[r.pos..], base + r.pos)?;
            r.pos += used;
            if m.shape() != v.shape() {
                return Err(Error::format(base + r.pos, format!("moment shapes differ for '{}'", name)));
            }
            moments.insert(name, Moments { m, v });
        }
        Ok((AdamState { config, t, moments }, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn slice(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.base + self.bytes.len(), "truncated optimizer state"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_param(values: Vec<f64>) -> IndexMap<String, Tensor<f64>> {
        let n = values.len();
        IndexMap::from([("w".to_string(), Tensor::new(&[n], values).unwrap())])
    }

    fn grads(values: Vec<f64>) -> IndexMap<String, Tensor<f64>> {
        one_param(values)
    }

    #[test]
    fn init_is_zero() {
        let p = IndexMap::from([
            ("a".to_string(), Tensor::<f32>::full(&[2, 3], 1.5)),
            ("b".to_string(), Tensor::<f32>::full(&[4], -2.0)),
        ]);
        let s = adam_init(&p, AdamConfig::default());
        assert_eq!(s.t, 0);
        assert!(s.moments.keys().eq(p.keys()));
        for (name, mo) in &s.moments {
            assert_eq!(mo.m.shape(), p[name].shape());
            assert!(mo.m.data().iter().chain(mo.v.data()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(vec![0.5, -1.0, 3.0]);
        let before = p.clone();
        let mut s = adam_init(&p, AdamConfig::default());
        adam_step(&mut s, &grads(vec![0.0; 3]), &mut p).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = one_param(vec![0.0; 4]);
        let mut s = adam_init(&p, AdamConfig::default());
        adam_step(&mut s, &grads(vec![3.0, -0.02, 1e4, -7.0]), &mut p).unwrap();
        let expect = [-1e-3, 1e-3, -1e-3, 1e-3];
        for (a, e) in p["w"].data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-8, "{} vs {}", a, e);
        }
    }

    #[test]
    fn errors_leave_state_untouched() {
        let mut p = one_param(vec![1.0, 2.0]);
        let mut s = adam_init(&p, AdamConfig::default());
        let empty = IndexMap::new();
        assert!(matches!(adam_step(&mut s, &empty, &mut p), Err(Error::State(_))));
        assert!(matches!(adam_step(&mut s, &grads(vec![1.0; 3]), &mut p), Err(Error::Dimension(_))));
        assert_eq!(s.t, 0);
        assert_eq!(p, one_param(vec![1.0, 2.0]));
    }

    /// Scalar Adam recurrence on f(θ) = θ², gradient 2θ, written out longhand.
    fn scalar_oracle(theta0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = vec![];
        for t in 1..=steps {
            let g = 2.0 * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            th -= lr * mh / (vh.sqrt() + eps);
            out.push(th);
        }
        out
    }

    #[test]
    fn minimizes_squared_norm() {
        let lr = 0.05;
        let oracle = scalar_oracle(1.0, lr, 500);
        let n = 5;
        let mut p = one_param(vec![1.0; n]);
        let mut s = adam_init(&p, AdamConfig::default().with_lr(lr));
        let mut reached = None;
        for (step, expect) in oracle.iter().enumerate() {
            let g = p["w"].data().iter().map(|x| 2.0 * x).collect();
            adam_step(&mut s, &grads(g), &mut p).unwrap();
            for &x in p["w"].data() {
                assert!((x - expect).abs() < 1e-12, "step {}: {} vs {}", step + 1, x, expect);
            }
            let norm = p["w"].dot(&p["w"]).sqrt();
            if norm < 1e-3 && reached.is_none() {
                reached = Some(step + 1);
            }
        }
        let norm = p["w"].dot(&p["w"]).sqrt();
        assert!(reached.is_some() && norm < 1e-3, "norm {} after 500 steps", norm);
    }

    #[test]
    fn constant_gradient_never_exceeds_lr() {
        let mut p = one_param(vec![0.0; 3]);
        let mut s = adam_init(&p, AdamConfig::default());
        for _ in 0..300 {
            let before = p["w"].clone();
            adam_step(&mut s, &grads(vec![0.3, -5.0, 1e-6]), &mut p).unwrap();
            assert!(p["w"].max_abs_diff(&before) <= 1e-3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut p = one_param(vec![0.1, -0.2, 0.3]);
        let mut s = adam_init(&p, AdamConfig::default().with_lr(0.01));
        for k in 0..3 {
            adam_step(&mut s, &grads(vec![k as f64, -1.0, 0.5]), &mut p).unwrap();
        }
        let mut bytes = vec![];
        s.encode(&mut bytes);
        let (back, used) = AdamState::<f64>::decode(&bytes, 0).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, s);
        let mut again = vec![];
        back.encode(&mut again);
        assert_eq!(again, bytes);
        assert!(matches!(
            AdamState::<f64>::decode(&bytes[..bytes.len() - 1], 0),
            Err(Error::Format { .. })
        ));
    }

    /// Largest possible |m̂|/√v̂ after t steps for arbitrary gradients, by
    /// Cauchy–Schwarz on the two exponentially weighted sums.
    fn update_bound(lr: f64, t: i32) -> f64 {
        let (b1, b2) = (0.9f64, 0.999f64);
        let r = b1 * b1 / b2;
        let geometric: f64 = (0..t).map(|k| r.powi(k)).sum();
        lr * (1.0 - b1) / (1.0 - b1.powi(t)) * ((1.0 - b2.powi(t)) / (1.0 - b2)).sqrt() * geometric.sqrt()
    }

    proptest! {
        #[test]
        fn update_is_bounded(gs in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..40)) {
            let lr = 1e-3;
            let mut p = one_param(vec![0.0; 4]);
            let mut s = adam_init(&p, AdamConfig::default());
            for (i, g) in gs.into_iter().enumerate() {
                let before = p["w"].clone();
                adam_step(&mut s, &grads(g), &mut p).unwrap();
                let bound = update_bound(lr, i as i32 + 1);
                prop_assert!(p["w"].max_abs_diff(&before) <= bound * (1.0 + 1e-9));
                prop_assert!(s.moments["w"].v.data().iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn scaling_keeps_sign_pattern(g in prop::collection::vec(-10.0f64..10.0, 6), c in 1e-3f64..1e3) {
            let step = |scale: f64| {
                let mut p = one_param(vec![0.0; 6]);
                let mut s = adam_init(&p, AdamConfig::default());
                adam_step(&mut s, &grads(g.iter().map(|x| x * scale).collect()), &mut p).unwrap();
                p["w"].data().to_vec()
            };
            let (a, b) = (step(1.0), step(c));
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.signum(), y.signum());
            }
            // large gradients drive the step size to lr
            for (x, gi) in step(1e6).iter().zip(&g) {
                if gi.abs() > 1e-6 {
                    prop_assert!((x.abs() - 1e-3).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn deterministic(g in prop::collection::vec(-1.0f64..1.0, 5), steps in 1usize..10) {
            let run = || {
                let mut p = one_param(vec![0.25; 5]);
                let mut s = adam_init(&p, AdamConfig::default());
                for _ in 0..steps {
                    adam_step(&mut s, &grads(g.clone()), &mut p).unwrap();
                }
                p["w"].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
