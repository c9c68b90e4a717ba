//! Self-checks runnable from the command line.
//!
//! `gradcheck` compares tape gradients of every primitive (and of a small
//! composed U-Net) with central differences in f64. `oracles` checks the
//! loss identities, the confusion counts against a naive tally, conv /
//! transposed-conv adjointness and the tile/stitch round trip.

use segnet::architectures::{Model, ModelKind, ModelSpec};
use segnet::autodiff::{conv_transpose2d, grad_check_many, BatchNormState, Mode, Tape, Var};
use segnet::datakit::{split_dataset, stitch, tile_origins, crop, Provenance, Scene};
use segnet::objectives::{binary_cross_entropy, categorical_cross_entropy, confusion, jaccard_index, ConfusionCounts, LabelTensor};
use segnet::{Result, RngStream, Tensor};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSED_TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Check { name: name.into(), error, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<32} error={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance
        )
    }
}

fn random(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0))
}

fn labels(shape: [usize; 3], classes: usize, rng: &mut RngStream) -> LabelTensor {
    let n = shape.iter().product();
    LabelTensor::new(shape, (0..n).map(|_| rng.below(classes) as u8).collect()).unwrap()
}

type Build<'a> = Box<dyn FnMut(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a>;

/// Runs `build` against a random linear functional of its output so every
/// output coordinate contributes to the checked gradient.
fn primitive(name: &str, inputs: Vec<Tensor<f64>>, out_shape: &[usize], seed: u64, mut build: Build) -> Result<Check> {
    let w = random(out_shape, &mut RngStream::new(seed));
    let report = grad_check_many(
        |t, v| {
            let y = build(t, v)?;
            t.weighted_sum(y, w.clone())
        },
        &inputs,
        EPS,
        None,
    )?;
    Ok(Check::new(name, report.max_rel_error(), PRIMITIVE_TOL))
}

pub fn gradcheck_suite() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(2024);
    let r = &mut rng;
    let mut out = vec![];

    let ins = vec![random(&[2, 5, 4, 3], r), random(&[3, 3, 3, 2], r), random(&[2], r)];
    out.push(primitive("conv2d 3x3 pad 1", ins, &[2, 5, 4, 2], 1, Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 1)))?);
    let ins = vec![random(&[1, 7, 5, 2], r), random(&[3, 3, 2, 3], r), random(&[3], r)];
    out.push(primitive("conv2d 3x3 stride 2", ins, &[1, 3, 2, 3], 2, Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2, 0)))?);
    let ins = vec![random(&[2, 3, 2, 3], r), random(&[2, 2, 4, 3], r)];
    out.push(primitive("conv_transpose2d 2x2", ins, &[2, 6, 4, 4], 3, Box::new(|t, v| t.conv_transpose2d(v[0], v[1], 2)))?);

    // well separated values keep every pooling window away from a tie
    let mut vals: Vec<f64> = (0..2 * 4 * 4 * 2).map(|i| i as f64 * 0.1).collect();
    r.shuffle(&mut vals);
    let ins = vec![Tensor::new(&[2, 4, 4, 2], vals)?];
    out.push(primitive("maxpool2d", ins, &[2, 2, 2, 2], 4, Box::new(|t, v| t.maxpool2d(v[0], 2)))?);

    let x = random(&[40], r).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    out.push(primitive("relu", vec![x], &[40], 5, Box::new(|t, v| Ok(t.relu(v[0]))))?);

    for mode in [Mode::Train, Mode::Infer] {
        let ins = vec![random(&[2, 3, 3, 2], r), random(&[2], r).map(|v| v + 1.5), random(&[2], r)];
        let build: Build = Box::new(move |t, v| {
            let mut st = BatchNormState::new(2);
            st.mean = Tensor::new(&[2], vec![0.1, -0.2])?;
            st.var = Tensor::new(&[2], vec![0.7, 1.3])?;
            st.populated = true;
            t.batchnorm2d(v[0], v[1], v[2], mode, &mut st)
        });
        let name = format!("batchnorm2d {}", if mode == Mode::Train { "train" } else { "infer" });
        out.push(primitive(&name, ins, &[2, 3, 3, 2], 6, build)?);
    }

    let build: Build = Box::new(|t, v| {
        let mut stream = RngStream::new(7);
        t.dropout(v[0], 0.4, &mut stream, Mode::Train)
    });
    out.push(primitive("dropout", vec![random(&[30], r)], &[30], 7, build)?);

    let ins = vec![random(&[1, 2, 3, 2], r), random(&[1, 2, 3, 3], r)];
    out.push(primitive("concat_channels", ins, &[1, 2, 3, 5], 8, Box::new(|t, v| t.concat_channels(v[0], v[1])))?);
    let ins = vec![random(&[1, 2, 3, 4], r).map(|v| 3.0 * v)];
    out.push(primitive("softmax_channels", ins, &[1, 2, 3, 4], 9, Box::new(|t, v| t.softmax_channels(v[0])))?);
    let ins = vec![random(&[3, 4], r), random(&[4, 2], r), random(&[2], r)];
    out.push(primitive("dense", ins, &[3, 2], 10, Box::new(|t, v| t.dense(v[0], v[1], v[2])))?);

    // losses are scaled by the pixel count so their gradients are O(1)
    let y = labels([2, 2, 3], 3, r);
    let report = grad_check_many(
        |t, v| {
            let l = t.softmax_cross_entropy(v[0], &y)?;
            Ok(t.scale(l, 12.0))
        },
        &[random(&[2, 2, 3, 3], r).map(|v| 2.0 * v)],
        EPS,
        None,
    )?;
    out.push(Check::new("categorical cross-entropy", report.max_rel_error(), PRIMITIVE_TOL));
    let y = labels([2, 2, 3], 2, r);
    let report = grad_check_many(
        |t, v| {
            let s = t.softmax_channels(v[0])?;
            let s1 = t.select_channel(s, 0)?;
            let l = t.binary_cross_entropy(s1, &y)?;
            Ok(t.scale(l, 12.0))
        },
        &[random(&[2, 2, 3, 2], r).map(|v| 2.0 * v)],
        EPS,
        None,
    )?;
    out.push(Check::new("binary cross-entropy", report.max_rel_error(), PRIMITIVE_TOL));

    out.push(unet_end_to_end()?);
    Ok(out)
}

/// Width-1/16 modified U-Net at 16x16, batch 2, every parameter probed on
/// up to 48 coordinates.
pub fn unet_end_to_end() -> Result<Check> {
    let spec = ModelSpec::new(ModelKind::ModifiedUnet, 16, 16, 1, 2).with_width(1.0 / 16.0).with_dropout(0.3).with_seed(11);
    let mut model = Model::<f64>::build(&spec)?;
    let mut rng = RngStream::new(12);
    let x = random(&[2, 16, 16, 1], &mut rng);
    let y = labels([2, 16, 16], 2, &mut rng);
    let mut inputs = vec![x];
    inputs.extend(model.params().values().cloned());
    let report = grad_check_many(
        |tape, vars| {
            let mut drop_rng = RngStream::new(99);
            let f = model.forward_with_params(tape, vars[0], &vars[1..], Mode::Train, &mut drop_rng)?;
            let l = tape.softmax_cross_entropy(f.logits, &y)?;
            Ok(tape.scale(l, 512.0))
        },
        &inputs,
        EPS,
        Some(48),
    )?;
    Ok(Check::new("modified U-Net end to end", report.max_rel_error(), COMPOSED_TOL))
}

pub fn oracle_suite() -> Result<Vec<Check>> {
    let mut rng = RngStream::new(77);
    let r = &mut rng;
    let mut out = vec![];

    // binary CE on s1 against categorical CE on [s1, 1 - s1]
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 1 + r.below(64);
        let s1 = Tensor::from_fn(&[1, 1, n, 1], |_| r.uniform_in(0.001, 0.999));
        let y = labels([1, 1, n], 2, r);
        let two = Tensor::from_fn(&[1, 1, n, 2], |i| if i % 2 == 0 { s1.data()[i / 2] } else { 1.0 - s1.data()[i / 2] });
        let (b, _) = binary_cross_entropy(&s1, &y)?;
        let (c, _) = categorical_cross_entropy(&two, &y)?;
        worst = worst.max((b - c).abs());
    }
    out.push(Check::new("binary CE = categorical CE", worst, 1e-9));

    let mut worst: f64 = 0.0;
    for c in 2..=8 {
        let s = Tensor::full(&[2, 3, 3, c], 1.0 / c as f64);
        let (l, _) = categorical_cross_entropy(&s, &labels([2, 3, 3], c, r))?;
        worst = worst.max((l - (c as f64).ln()).abs());
    }
    out.push(Check::new("uniform scores give ln C", worst, 1e-12));

    let mut mismatches = 0u64;
    for _ in 0..1000 {
        let k = 2 + r.below(4);
        let p = labels([1, 32, 32], k, r);
        let g = labels([1, 32, 32], k, r);
        let counts = confusion(&p, &g, k)?;
        if counts != naive_counts(p.data(), g.data(), k) {
            mismatches += 1;
        }
    }
    out.push(Check::new("confusion vs naive tally", mismatches as f64, 0.0));
    let known = ConfusionCounts { tp: vec![3], fp: vec![1], fn_: vec![1], tn: vec![0], total: 5 };
    out.push(Check::new("Jaccard 3/1/1 = 0.6", (jaccard_index(&known, 0) - 0.6).abs(), 0.0));

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (k, s) = (1 + r.below(4), 1 + r.below(3));
        let (oh, ow) = (1 + r.below(5), 1 + r.below(5));
        let (ci, co, n) = (1 + r.below(4), 1 + r.below(4), 1 + r.below(2));
        let x = random(&[n, (oh - 1) * s + k, (ow - 1) * s + k, ci], r);
        let kern = random(&[k, k, ci, co], r);
        let y = random(&[n, oh, ow, co], r);
        let lhs = direct_conv(&x, &kern, s).dot(&y);
        let rhs = x.dot(&conv_transpose2d(&y, &kern, s)?);
        worst = worst.max((lhs - rhs).abs());
    }
    out.push(Check::new("conv / transposed conv adjoint", worst, 1e-10));

    let mut failures = 0u64;
    for _ in 0..50 {
        let tile = 8 + r.below(24);
        let (h, w) = (tile + r.below(90), tile + r.below(90));
        let overlap = r.below(tile);
        let img = Tensor::from_fn(&[h, w, 2], |_| r.below(256) as u8);
        let rows = tile_origins(h, tile, overlap)?;
        let cols = tile_origins(w, tile, overlap)?;
        let mut pieces = vec![];
        for &y in &rows {
            for &x in &cols {
                pieces.push(((y, x), crop(&img, y, x, tile, tile)?));
            }
        }
        let refs: Vec<_> = pieces.iter().map(|(o, t)| (*o, t)).collect();
        if stitch(&refs, h, w)? != img {
            failures += 1;
        }
    }
    out.push(Check::new("tile then stitch is identity", failures as f64, 0.0));

    let scenes: Vec<Scene> = (0..200)
        .map(|i| {
            let prov = Provenance { source: "blank".into(), origin: (i, 0) };
            Scene::new(Tensor::zeros(&[4, 4, 1]), LabelTensor::filled([1, 4, 4], 1), prov).unwrap()
        })
        .collect();
    let set = split_dataset(scenes, (4, 5), 3)?;
    let sizes = (set.train().len() as f64 - 160.0).abs() + (set.validation().len() as f64 - 40.0).abs();
    out.push(Check::new("80:20 split of 200", sizes, 0.0));
    Ok(out)
}

/// Unpadded strided cross-correlation written out loop by loop, for any
/// kernel size (the library conv only takes odd kernels).
fn direct_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let (n, h, w, ci) = (xs[0], xs[1], xs[2], xs[3]);
    let (kh, kw, co) = (ks[0], ks[1], ks[3]);
    let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
    Tensor::from_fn(&[n, oh, ow, co], |i| {
        let (b, rest) = (i / (oh * ow * co), i % (oh * ow * co));
        let (oy, ox, o) = (rest / (ow * co), rest / co % ow, rest % co);
        let mut acc = 0.0;
        for ky in 0..kh {
            for kx in 0..kw {
                for c in 0..ci {
                    let xv = x.data()[((b * h + oy * stride + ky) * w + ox * stride + kx) * ci + c];
                    acc += xv * k.data()[((ky * kw + kx) * ci + c) * co + o];
                }
            }
        }
        acc
    })
}

fn naive_counts(pred: &[u8], gt: &[u8], k: usize) -> ConfusionCounts {
    let mut c = ConfusionCounts::new(k);
    for (&p, &g) in pred.iter().zip(gt) {
        for class in 0..k as u8 {
            match (p == class, g == class) {
                (true, true) => c.tp[class as usize] += 1,
                (true, false) => c.fp[class as usize] += 1,
                (false, true) => c.fn_[class as usize] += 1,
                (false, false) => c.tn[class as usize] += 1,
            }
        }
        c.total += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suite_passes() {
        let checks = oracle_suite().unwrap();
        assert_eq!(checks.len(), 7);
        for c in &checks {
            assert!(c.passed(), "{}", c.line());
        }
    }

    #[test]
    fn check_lines() {
        assert!(Check::new("x", 1e-7, 1e-6).line().starts_with("PASS x"));
        assert!(Check::new("x", 2.0, 1e-6).line().starts_with("FAIL"));
        assert!(!Check::new("nan", f64::NAN, 1.0).passed());
    }
}
