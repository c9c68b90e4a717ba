//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a multi-input gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
    /// Number of coordinates compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Largest relative error between the tape gradient of `build`'s scalar
/// output with respect to `input` and its central difference with step
/// `epsilon`.
pub fn grad_check<F>(mut build: F, input: &Tensor<f64>, epsilon: f64) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let report = grad_check_many(
        |tape, vars| build(tape, vars[0]),
        std::slice::from_ref(input),
        epsilon,
        None,
    )?;
    Ok(report.max_rel_error())
}

/// Checks gradients with respect to several inputs at once.
///
/// `build` is re-run for every perturbation, so it must be a pure function of
/// its inputs (reset any mutable state such as random streams inside it).
/// When `max_probes` is set, inputs larger than that are checked on an evenly
/// strided subset of that many coordinates.
pub fn grad_check_many<F>(
    mut build: F,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    max_probes: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Usage("grad_check needs a scalar output".into()));
        }
        Ok(v.data()[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for i in 0..inputs.len() {
        let len = inputs[i].len();
        let step = match max_probes {
            Some(p) if p > 0 && len > p => len.div_ceil(p),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        for j in (0..len).step_by(step) {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport { per_input, checked })
}
