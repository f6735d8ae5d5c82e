//! Dense feedforward networks with backpropagation.
//!
//! One model type serves the defender classifier, the GAN generator, and the
//! GAN discriminator. Everything is double precision and value-semantic;
//! training mutates only locally owned state, so models can be moved freely
//! between threads.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
    /// tanh scaled into (-scale, scale) per component.
    ScaledTanh { scale: f64 },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Batch training settings shared by the defender and the GAN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SimError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SimError::Config("learning_rate must be > 0".into()));
        }
        if self.steps == 0 {
            return Err(SimError::Config("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters and architecture of a dense feedforward network.
///
/// `weights[l]` has shape `dims[l] x dims[l+1]`; inputs are row vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

/// Cached per-layer results of one forward pass.
pub struct ForwardPass {
    /// activations[0] is the input batch; activations[L] the final outputs.
    pub activations: Vec<Array2<f64>>,
    /// Pre-activation values z = a W + b for each layer.
    pub pre: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn outputs(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty")
    }
}

/// Parameter gradients, shape-congruent with an `MlpModel`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

fn apply_hidden(kind: HiddenActivation, z: &Array2<f64>) -> Array2<f64> {
    match kind {
        HiddenActivation::Relu => z.mapv(|v| v.max(0.0)),
        HiddenActivation::Tanh => z.mapv(f64::tanh),
    }
}

fn hidden_derivative(kind: HiddenActivation, z: &Array2<f64>) -> Array2<f64> {
    match kind {
        HiddenActivation::Relu => z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        HiddenActivation::Tanh => z.mapv(|v| 1.0 - v.tanh().powi(2)),
    }
}

fn apply_output(kind: OutputActivation, z: &Array2<f64>) -> Array2<f64> {
    match kind {
        OutputActivation::Softmax => {
            let mut out = z.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            out
        }
        OutputActivation::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        OutputActivation::ScaledTanh { scale } => z.mapv(|v| scale * v.tanh()),
        OutputActivation::Linear => z.clone(),
    }
}

impl MlpModel {
    /// Initialize a model: He-normal weights for ReLU layers, Xavier-normal
    /// for tanh and the output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(SimError::Config("model needs at least two layers".into()));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(SimError::Config("layer widths must be >= 1".into()));
        }
        let num_layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(num_layers);
        let mut biases = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let fan_in = layer_dims[l];
            let fan_out = layer_dims[l + 1];
            let is_hidden = l + 1 < num_layers;
            let std = if is_hidden && hidden_activation == HiddenActivation::Relu {
                (2.0 / fan_in as f64).sqrt()
            } else {
                (2.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let mut w = Array2::zeros((fan_in, fan_out));
            for v in w.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = std * n;
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("nonempty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Run a batch (rows are examples) through the network.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<ForwardPass> {
        if batch.ncols() != self.input_dim() {
            return Err(SimError::Shape(format!(
                "input width {} does not match model input dim {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut pre = Vec::with_capacity(self.num_layers());
        activations.push(batch.clone());
        for l in 0..self.num_layers() {
            let z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            let a = if l + 1 < self.num_layers() {
                apply_hidden(self.hidden_activation, &z)
            } else {
                apply_output(self.output_activation, &z)
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardPass { activations, pre })
    }

    /// Gradients of the batch-mean loss w.r.t. every parameter, plus the
    /// gradient w.r.t. the input batch.
    ///
    /// CrossEntropy requires a Softmax head, BinaryCrossEntropy a Sigmoid
    /// head; both collapse to the usual `(p - y) / n` output delta.
    pub fn backward_loss(
        &self,
        fwd: &ForwardPass,
        labels: &Array2<f64>,
        kind: LossKind,
    ) -> Result<(Gradients, Array2<f64>)> {
        let outputs = fwd.outputs();
        if outputs.raw_dim() != labels.raw_dim() {
            return Err(SimError::Shape(format!(
                "labels {:?} vs outputs {:?}",
                labels.shape(),
                outputs.shape()
            )));
        }
        match (kind, self.output_activation) {
            (LossKind::CrossEntropy, OutputActivation::Softmax)
            | (LossKind::BinaryCrossEntropy, OutputActivation::Sigmoid) => {}
            _ => {
                return Err(SimError::Config(format!(
                    "loss {kind:?} is incompatible with output activation {:?}",
                    self.output_activation
                )))
            }
        }
        let n = outputs.nrows() as f64;
        let delta = (outputs - labels) / n;
        Ok(self.backprop(fwd, delta))
    }

    /// Backpropagate an arbitrary gradient w.r.t. the final (post-activation)
    /// outputs. Used to chain gradients through a frozen discriminator and
    /// the channel into the generator.
    pub fn backward_from_output(
        &self,
        fwd: &ForwardPass,
        output_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let outputs = fwd.outputs();
        if output_grad.raw_dim() != outputs.raw_dim() {
            return Err(SimError::Shape("output gradient shape mismatch".into()));
        }
        let delta = match self.output_activation {
            OutputActivation::Linear => output_grad.clone(),
            OutputActivation::Sigmoid => output_grad * &outputs.mapv(|p| p * (1.0 - p)),
            OutputActivation::ScaledTanh { scale } => {
                output_grad * &outputs.mapv(|a| scale * (1.0 - (a / scale).powi(2)))
            }
            OutputActivation::Softmax => {
                // dz_i = p_i * (g_i - sum_j g_j p_j), rowwise
                let mut delta = Array2::zeros(outputs.raw_dim());
                for (mut drow, (prow, grow)) in delta
                    .rows_mut()
                    .into_iter()
                    .zip(outputs.rows().into_iter().zip(output_grad.rows()))
                {
                    let dot: f64 = prow.iter().zip(grow.iter()).map(|(p, g)| p * g).sum();
                    for (d, (p, g)) in drow.iter_mut().zip(prow.iter().zip(grow.iter())) {
                        *d = p * (g - dot);
                    }
                }
                delta
            }
        };
        Ok(self.backprop(fwd, delta))
    }

    fn backprop(&self, fwd: &ForwardPass, mut delta: Array2<f64>) -> (Gradients, Array2<f64>) {
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.num_layers()).rev() {
            grads.weights[l] = fwd.activations[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.weights[l].t());
            if l > 0 {
                delta = delta * hidden_derivative(self.hidden_activation, &fwd.pre[l - 1]);
            }
        }
        (grads, delta)
    }
}

/// Batch-mean loss over valid probability outputs.
pub fn loss(outputs: &Array2<f64>, labels: &Array2<f64>, kind: LossKind) -> Result<f64> {
    if outputs.raw_dim() != labels.raw_dim() {
        return Err(SimError::Shape("labels/outputs shape mismatch".into()));
    }
    if outputs.iter().any(|&p| !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p)) {
        return Err(SimError::Numeric("outputs are not valid probabilities".into()));
    }
    let n = outputs.nrows() as f64;
    let total = match kind {
        LossKind::CrossEntropy => outputs
            .iter()
            .zip(labels.iter())
            .map(|(&p, &y)| -y * p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
            .sum::<f64>(),
        LossKind::BinaryCrossEntropy => outputs
            .iter()
            .zip(labels.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>(),
    };
    Ok(total / n)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd,
    Adam(AdamState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &MlpModel) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam(AdamState {
                m_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
                v_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
                m_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
                v_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
                step: 0,
            }),
        }
    }
}

/// Apply one optimizer update in place.
pub fn opt_step(model: &mut MlpModel, grads: &Gradients, state: &mut OptimizerState, learning_rate: f64) {
    match state {
        OptimizerState::Sgd => {
            for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                w.scaled_add(-learning_rate, g);
            }
            for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                b.scaled_add(-learning_rate, g);
            }
        }
        OptimizerState::Adam(st) => {
            st.step += 1;
            let t = st.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for l in 0..model.weights.len() {
                st.m_w[l].zip_mut_with(&grads.weights[l], |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
                st.v_w[l].zip_mut_with(&grads.weights[l], |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
                let w = &mut model.weights[l];
                ndarray::Zip::from(w)
                    .and(&st.m_w[l])
                    .and(&st.v_w[l])
                    .for_each(|w, &m, &v| {
                        *w -= learning_rate * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                    });
                st.m_b[l].zip_mut_with(&grads.biases[l], |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
                st.v_b[l].zip_mut_with(&grads.biases[l], |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
                let b = &mut model.biases[l];
                ndarray::Zip::from(b)
                    .and(&st.m_b[l])
                    .and(&st.v_b[l])
                    .for_each(|b, &m, &v| {
                        *b -= learning_rate * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                    });
            }
        }
    }
}

/// Minibatch training on a fixed labeled matrix. Batches cycle through
/// reshuffled epochs; returns the per-step batch losses.
pub fn train_supervised<R: Rng + ?Sized>(
    model: &mut MlpModel,
    inputs: &Array2<f64>,
    labels: &Array2<f64>,
    kind: LossKind,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.nrows() != labels.nrows() {
        return Err(SimError::Shape("inputs/labels row mismatch".into()));
    }
    let n = inputs.nrows();
    let batch = cfg.batch_size.min(n);
    let mut state = OptimizerState::new(cfg.optimizer, model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force an initial shuffle
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor + batch > n {
            shuffle(&mut order, rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let x = select_rows(inputs, idx);
        let y = select_rows(labels, idx);
        let fwd = model.forward(&x)?;
        losses.push(loss(fwd.outputs(), &y, kind)?);
        let (grads, _) = model.backward_loss(&fwd, &y, kind)?;
        opt_step(model, &grads, &mut state, cfg.learning_rate);
    }
    Ok(losses)
}

pub(crate) fn select_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

pub(crate) fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// model persistence

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: MlpModel,
}

pub fn model_to_json(model: &MlpModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    })?)
}

pub fn model_from_json(text: &str) -> Result<MlpModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(SimError::Serde(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    let m = &file.model;
    if m.layer_dims.len() < 2 || m.weights.len() != m.layer_dims.len() - 1 || m.biases.len() != m.weights.len() {
        return Err(SimError::Serde("inconsistent layer structure".into()));
    }
    for l in 0..m.weights.len() {
        if m.weights[l].shape() != [m.layer_dims[l], m.layer_dims[l + 1]] || m.biases[l].len() != m.layer_dims[l + 1] {
            return Err(SimError::Serde(format!("weight shape mismatch at layer {l}")));
        }
    }
    Ok(file.model)
}

// ---------------------------------------------------------------------------
// finite-difference verification

/// Central-difference gradients of an arbitrary scalar function of the model
/// parameters. Independent of the analytic backward pass.
pub fn numeric_gradients<F: Fn(&MlpModel) -> f64>(model: &MlpModel, f: F, h: f64) -> Gradients {
    let mut grads = Gradients::zeros_like(model);
    let mut probe = model.clone();
    for l in 0..model.weights.len() {
        for idx in 0..model.weights[l].len() {
            let orig = model.weights[l].as_slice().unwrap()[idx];
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig + h;
            let plus = f(&probe);
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig - h;
            let minus = f(&probe);
            probe.weights[l].as_slice_mut().unwrap()[idx] = orig;
            grads.weights[l].as_slice_mut().unwrap()[idx] = (plus - minus) / (2.0 * h);
        }
        for idx in 0..model.biases[l].len() {
            let orig = model.biases[l][idx];
            probe.biases[l][idx] = orig + h;
            let plus = f(&probe);
            probe.biases[l][idx] = orig - h;
            let minus = f(&probe);
            probe.biases[l][idx] = orig;
            grads.biases[l][idx] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Worst relative disagreement between two gradient sets:
/// `|a - n| / max(|a| + |n|, 1e-8)` over every parameter.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    let mut upd = |a: f64, n: f64| {
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        worst = worst.max(rel);
    };
    for (aw, nw) in analytic.weights.iter().zip(&numeric.weights) {
        for (&a, &n) in aw.iter().zip(nw.iter()) {
            upd(a, n);
        }
    }
    for (ab, nb) in analytic.biases.iter().zip(&numeric.biases) {
        for (&a, &n) in ab.iter().zip(nb.iter()) {
            upd(a, n);
        }
    }
    worst
}
