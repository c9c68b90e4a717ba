use indexmap::IndexMap;

use super::plan::{program, shape_plan, LayerInfo, Step};
use super::spec::ModelSpec;
use crate::autodiff::{BatchNormState, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// An instantiated network: parameters, batch-norm running state and the
/// program that wires them together.
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    params: IndexMap<String, Tensor<T>>,
    bn: IndexMap<String, BatchNormState<T>>,
    steps: Vec<Step>,
    plan: Vec<LayerInfo>,
}

/// Result of recording a forward pass on a tape.
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    /// Tape handle of every parameter, in parameter order.
    pub params: Vec<(String, Var)>,
}

impl<T: Scalar> Model<T> {
    /// Allocates parameters with He fan-in initialization drawn from the
    /// spec seed; biases and batch-norm shifts start at 0 and scales at 1.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let steps = program(spec)?;
        let plan = shape_plan(spec)?;
        let mut rng = RngStream::new(spec.seed);
        let mut params = IndexMap::new();
        let mut bn = IndexMap::new();
        let mut he = |shape: &[usize], fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::from_f64(std * rng.normal()))
        };
        for step in &steps {
            match step {
                Step::ConvBlock { name, cin, cout } => {
                    params.insert(format!("{name}.conv.weight"), he(&[3, 3, *cin, *cout], 9 * cin));
                    params.insert(format!("{name}.conv.bias"), Tensor::zeros(&[*cout]));
                    params.insert(format!("{name}.bn.gamma"), Tensor::full(&[*cout], T::one()));
                    params.insert(format!("{name}.bn.beta"), Tensor::zeros(&[*cout]));
                    bn.insert(format!("{name}.bn"), BatchNormState::new(*cout));
                }
                Step::Up { name, cin, cout } => {
                    params.insert(format!("{name}.weight"), he(&[2, 2, *cout, *cin], *cin));
                }
                Step::Conv1x1 { name, cin, cout } => {
                    params.insert(format!("{name}.weight"), he(&[1, 1, *cin, *cout], *cin));
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[*cout]));
                }
                Step::Dense { name, cin, cout } => {
                    params.insert(format!("{name}.weight"), he(&[*cin, *cout], *cin));
                    params.insert(format!("{name}.bias"), Tensor::zeros(&[*cout]));
                }
                Step::MaxPool | Step::Dropout | Step::PushSkip | Step::ConcatSkip | Step::Softmax => {}
            }
        }
        Ok(Model {
            spec: spec.clone(),
            params,
            bn,
            steps,
            plan,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn plan(&self) -> &[LayerInfo] {
        &self.plan
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn bn_states(&self) -> &IndexMap<String, BatchNormState<T>> {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut IndexMap<String, BatchNormState<T>> {
        &mut self.bn
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Replaces parameters and running state, checking names and shapes.
    pub fn load_state(
        &mut self,
        params: IndexMap<String, Tensor<T>>,
        bn: IndexMap<String, BatchNormState<T>>,
    ) -> Result<()> {
        check_same_layout("parameter", &self.params, &params, |t| t.shape().to_vec())?;
        check_same_layout("batch-norm state", &self.bn, &bn, |s| s.mean.shape().to_vec())?;
        self.params = params;
        self.bn = bn;
        Ok(())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = &self.spec;
        match *shape {
            [_, h, w, c] if h == s.input_height && w == s.input_width && c == s.input_channels => Ok(()),
            _ => Err(Error::dim(format!(
                "model expects [N,{},{},{}] input, got {:?}",
                s.input_height, s.input_width, s.input_channels, shape
            ))),
        }
    }

    /// Records a forward pass. In train mode parameters are differentiable
    /// leaves, batch norm uses (and updates) batch statistics and dropout
    /// draws from `rng`; infer mode records constants and uses running
    /// statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode, rng: &mut RngStream) -> Result<Forward> {
        let mut bn = std::mem::take(&mut self.bn);
        let out = self.run(tape, input, None, mode, rng, &mut bn);
        self.bn = bn;
        out
    }

    /// Like [`Model::forward`] but reads parameters from caller-recorded tape
    /// nodes, one per parameter in [`Model::params`] order. Used to check
    /// gradients with respect to the weights.
    pub fn forward_with_params(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Forward> {
        if params.len() != self.params.len() {
            return Err(Error::State(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut bn = std::mem::take(&mut self.bn);
        let out = self.run(tape, input, Some(params), mode, rng, &mut bn);
        self.bn = bn;
        out
    }

    /// Infer-mode class probabilities `[N,H,W,num_classes]`.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let mut bn = self.bn.clone();
        // dropout is the identity in infer mode and never draws
        let mut rng = RngStream::new(0);
        let f = self.run(&mut tape, x, None, Mode::Infer, &mut rng, &mut bn)?;
        Ok(tape.value(f.probs).clone())
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        given: Option<&[Var]>,
        mode: Mode,
        rng: &mut RngStream,
        bn: &mut IndexMap<String, BatchNormState<T>>,
    ) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        let mut handles = Vec::with_capacity(self.params.len());
        let mut vars: IndexMap<&str, Var> = IndexMap::with_capacity(self.params.len());
        for (i, (name, value)) in self.params.iter().enumerate() {
            let v = match (given, mode) {
                (Some(g), _) => g[i],
                (None, Mode::Train) => tape.param(value.clone()),
                (None, Mode::Infer) => tape.constant(value.clone()),
            };
            vars.insert(name.as_str(), v);
            handles.push((name.clone(), v));
        }
        let p = |key: String| -> Var { vars[key.as_str()] };

        let mut x = input;
        let mut skips = Vec::new();
        let mut logits = None;
        for step in &self.steps {
            match step {
                Step::ConvBlock { name, .. } => {
                    x = tape.conv2d(x, p(format!("{name}.conv.weight")), p(format!("{name}.conv.bias")), 1, 1)?;
                    let (g, b) = (p(format!("{name}.bn.gamma")), p(format!("{name}.bn.beta")));
                    let state = bn
                        .get_mut(&format!("{name}.bn"))
                        .ok_or_else(|| Error::State(format!("missing batch-norm state for {name}")))?;
                    x = match mode {
                        Mode::Train => tape.batchnorm2d(x, g, b, Mode::Train, state)?,
                        Mode::Infer => tape.batchnorm2d_infer(x, g, b, state)?,
                    };
                    x = tape.relu(x);
                }
                Step::MaxPool => x = tape.maxpool2d(x, 2)?,
                Step::Dropout => x = tape.dropout(x, self.spec.dropout_rate, rng, mode)?,
                Step::PushSkip => skips.push(x),
                Step::Up { name, .. } => x = tape.conv_transpose2d(x, p(format!("{name}.weight")), 2)?,
                Step::ConcatSkip => {
                    let skip = skips.pop().expect("balanced skips");
                    x = tape.concat_channels(x, skip)?;
                }
                Step::Conv1x1 { name, .. } => {
                    x = tape.conv2d(x, p(format!("{name}.weight")), p(format!("{name}.bias")), 1, 0)?;
                }
                Step::Dense { name, cin, cout } => {
                    let [n, h, w, _] = tape.value(x).dims4()?;
                    let flat = tape.reshape(x, &[n * h * w, *cin])?;
                    let y = tape.dense(flat, p(format!("{name}.weight")), p(format!("{name}.bias")))?;
                    x = tape.reshape(y, &[n, h, w, *cout])?;
                }
                Step::Softmax => {
                    logits = Some(x);
                    x = tape.softmax_channels(x)?;
                }
            }
        }
        Ok(Forward {
            logits: logits.expect("program ends with softmax"),
            probs: x,
            params: handles,
        })
    }
}

fn check_same_layout<V>(
    what: &str,
    current: &IndexMap<String, V>,
    incoming: &IndexMap<String, V>,
    shape: impl Fn(&V) -> Vec<usize>,
) -> Result<()> {
    if current.len() != incoming.len() {
        return Err(Error::State(format!(
            "{} count mismatch: model has {}, got {}",
            what,
            current.len(),
            incoming.len()
        )));
    }
    for ((a, va), (b, vb)) in current.iter().zip(incoming) {
        if a != b {
            return Err(Error::State(format!("{} name mismatch: expected {}, got {}", what, a, b)));
        }
        if shape(va) != shape(vb) {
            return Err(Error::dim(format!(
                "{} {} has shape {:?}, expected {:?}",
                what,
                a,
                shape(vb),
                shape(va)
            )));
        }
    }
    Ok(())
}
