//! Feed-forward classifiers trained by analytic backpropagation.
//!
//! Parameters live in one flat vector laid out layer by layer as
//! `weights (width x fan_in, row-major) | biases | gamma | beta`, the last two
//! only for layers with batch normalization. Batch-norm running statistics
//! are kept in a separate, non-trainable state vector.

mod arch;
mod checkpoint;
mod optim;

pub use arch::Architecture;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::Optimizer;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::{lit, Scalar};

/// Keras-style batch-normalization momentum for the running statistics.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("non-finite loss during epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

/// One dense layer; `batch_norm` appends a batch-normalization layer after
/// the activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            batch_norm: false,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArchitecture(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        let Some(last) = self.layers.last() else {
            return bad("at least one layer is required".into());
        };
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return bad(format!("layer {i} has zero width"));
            }
            let is_last = i + 1 == self.layers.len();
            if l.activation == Activation::Softmax && !is_last {
                return bad(format!("softmax on hidden layer {i}"));
            }
            if l.batch_norm && is_last {
                return bad("batch normalization on the output layer".into());
            }
        }
        match (last.activation, self.loss) {
            (Activation::Sigmoid, LossKind::BinaryCrossEntropy) if last.width == 1 => {}
            (Activation::Softmax, LossKind::CategoricalCrossEntropy) if last.width >= 2 => {}
            (a, l) => {
                return bad(format!(
                    "output layer {a:?} x {} is incompatible with {l:?} (need sigmoid x 1 + binary or softmax x K + categorical)",
                    last.width
                ))
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(l) if l.activation == Activation::Softmax => l.width,
            _ => 2,
        }
    }

    /// Trainable parameters: dense weights and biases plus batch-norm scale
    /// and offset.
    pub fn parameter_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut total = 0;
        for l in &self.layers {
            total += fan_in * l.width + l.width;
            if l.batch_norm {
                total += 2 * l.width;
            }
            fan_in = l.width;
        }
        total
    }

    /// Same architecture with every hidden activation replaced.
    pub fn with_hidden_activation(mut self, activation: Activation) -> Self {
        let n = self.layers.len();
        for l in &mut self.layers[..n - 1] {
            l.activation = activation;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerLayout {
    fan_in: usize,
    width: usize,
    activation: Activation,
    weights: usize,
    biases: usize,
    /// offsets of gamma and beta in the parameters and of the running mean
    /// and variance in the state
    norm: Option<NormLayout>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct NormLayout {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

fn layout_of(config: &ModelConfig) -> (Vec<LayerLayout>, usize, usize) {
    let mut fan_in = config.input_dim;
    let mut p = 0;
    let mut s = 0;
    let mut out = Vec::with_capacity(config.layers.len());
    for l in &config.layers {
        let weights = p;
        let biases = weights + fan_in * l.width;
        p = biases + l.width;
        let norm = l.batch_norm.then(|| {
            let n = NormLayout {
                gamma: p,
                beta: p + l.width,
                running_mean: s,
                running_var: s + l.width,
            };
            p += 2 * l.width;
            s += 2 * l.width;
            n
        });
        out.push(LayerLayout {
            fan_in,
            width: l.width,
            activation: l.activation,
            weights,
            biases,
            norm,
        });
        fan_in = l.width;
    }
    (out, p, s)
}

/// Batch statistics versus running statistics in batch-norm layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct NormTrace<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    out: Vec<T>,
}

struct LayerTrace<T> {
    z: Vec<T>,
    a: Vec<T>,
    norm: Option<NormTrace<T>>,
}

impl<T> LayerTrace<T> {
    fn output(&self) -> &[T] {
        match &self.norm {
            Some(n) => &n.out,
            None => &self.a,
        }
    }
}

struct Trace<T> {
    layers: Vec<LayerTrace<T>>,
    batch: usize,
    mode: Mode,
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

/// Feed-forward classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Scalar> {
    config: ModelConfig,
    layout: Vec<LayerLayout>,
    params: Vec<T>,
    state: Vec<T>,
    trained: bool,
}

impl<T: Scalar> Classifier<T> {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale; all drawn
    /// from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, n_params, n_state) = layout_of(&config);
        let mut c = Self {
            config,
            layout,
            params: vec![T::zero(); n_params],
            state: vec![T::zero(); n_state],
            trained: false,
        };
        c.initialize();
        Ok(c)
    }

    fn initialize(&mut self) {
        let mut r = rng::substream(self.config.init_seed, 0);
        for l in &self.layout {
            let limit = (6.0 / (l.fan_in + l.width) as f64).sqrt();
            for w in &mut self.params[l.weights..l.biases] {
                *w = T::from_f64_lossy(r.random_range(-limit..limit));
            }
            self.params[l.biases..l.biases + l.width].fill(T::zero());
            if let Some(n) = l.norm {
                self.params[n.gamma..n.gamma + l.width].fill(T::one());
                self.params[n.beta..n.beta + l.width].fill(T::zero());
                self.state[n.running_mean..n.running_mean + l.width].fill(T::zero());
                self.state[n.running_var..n.running_var + l.width].fill(T::one());
            }
        }
        self.trained = false;
    }

    /// Re-initializes every parameter from the configured seed.
    pub fn reset(&mut self) {
        self.initialize();
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[T] {
        &self.params
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Batch-norm running means and variances.
    pub fn state(&self) -> &[T] {
        &self.state
    }

    pub(crate) fn from_raw(
        config: ModelConfig,
        params: Vec<T>,
        state: Vec<T>,
        trained: bool,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, n_params, n_state) = layout_of(&config);
        if params.len() != n_params || state.len() != n_state {
            return Err(ModelError::Checkpoint(format!(
                "expected {n_params} parameters and {n_state} state values, found {} and {}",
                params.len(),
                state.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            state,
            trained,
        })
    }

    fn check_dim(&self, found: usize) -> Result<(), ModelError> {
        if found != self.config.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.input_dim,
                found,
            });
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<(), ModelError> {
        let k = self.num_classes();
        match labels.iter().find(|&&l| l >= k) {
            Some(&label) => Err(ModelError::InvalidLabel { label, classes: k }),
            None => Ok(()),
        }
    }

    fn forward(&self, x: &[T], batch: usize, mode: Mode) -> Trace<T> {
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(self.layout.len());
        for (li, l) in self.layout.iter().enumerate() {
            let input: &[T] = if li == 0 { x } else { layers[li - 1].output() };
            let w = &self.params[l.weights..l.biases];
            let bias = &self.params[l.biases..l.biases + l.width];
            let mut z = vec![T::zero(); batch * l.width];
            for r in 0..batch {
                let row = &input[r * l.fan_in..(r + 1) * l.fan_in];
                let zr = &mut z[r * l.width..(r + 1) * l.width];
                for o in 0..l.width {
                    zr[o] = bias[o] + dot(&w[o * l.fan_in..(o + 1) * l.fan_in], row);
                }
            }
            let mut a = z.clone();
            for r in 0..batch {
                activate(l.activation, &mut a[r * l.width..(r + 1) * l.width]);
            }
            let norm = l.norm.map(|n| self.normalize_forward(&a, batch, l.width, n, mode));
            layers.push(LayerTrace { z, a, norm });
        }
        Trace { layers, batch, mode }
    }

    fn normalize_forward(&self, a: &[T], batch: usize, width: usize, n: NormLayout, mode: Mode) -> NormTrace<T> {
        let (mean, var) = match mode {
            Mode::Train => {
                let bt = T::from_usize_lossy(batch);
                let mut mean = vec![T::zero(); width];
                for r in 0..batch {
                    for j in 0..width {
                        mean[j] = mean[j] + a[r * width + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / bt);
                let mut var = vec![T::zero(); width];
                for r in 0..batch {
                    for j in 0..width {
                        let d = a[r * width + j] - mean[j];
                        var[j] = var[j] + d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / bt);
                (mean, var)
            }
            Mode::Eval => (
                self.state[n.running_mean..n.running_mean + width].to_vec(),
                self.state[n.running_var..n.running_var + width].to_vec(),
            ),
        };
        let eps = lit::<T>(BN_EPSILON);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = &self.params[n.gamma..n.gamma + width];
        let beta = &self.params[n.beta..n.beta + width];
        let mut xhat = vec![T::zero(); batch * width];
        let mut out = vec![T::zero(); batch * width];
        for r in 0..batch {
            for j in 0..width {
                let k = r * width + j;
                xhat[k] = (a[k] - mean[j]) * inv_std[j];
                out[k] = gamma[j] * xhat[k] + beta[j];
            }
        }
        NormTrace {
            xhat,
            inv_std,
            mean,
            var,
            out,
        }
    }

    /// Mean loss over the batch, its gradient w.r.t. the output
    /// pre-activations, and the number of correct predictions.
    fn output_loss(&self, trace: &Trace<T>, labels: &[usize]) -> (T, Vec<T>, usize) {
        let out = trace.layers.last().expect("at least one layer");
        let b = trace.batch;
        let bt = T::from_usize_lossy(b);
        let k = self.layout.last().expect("at least one layer").width;
        let mut dz = out.a.clone();
        let mut loss = T::zero();
        let mut correct = 0;
        match self.config.loss {
            LossKind::BinaryCrossEntropy => {
                for r in 0..b {
                    let z = out.z[r];
                    let y = T::from_usize_lossy(labels[r]);
                    // log(1 + e^z) - y z, stable for both signs
                    loss = loss + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
                    dz[r] = (out.a[r] - y) / bt;
                    let pred = usize::from(out.a[r] >= lit(0.5));
                    correct += usize::from(pred == labels[r]);
                }
            }
            LossKind::CategoricalCrossEntropy => {
                for r in 0..b {
                    let zr = &out.z[r * k..(r + 1) * k];
                    let m = zr.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = m + zr.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                    loss = loss + lse - zr[labels[r]];
                    let pr = &mut dz[r * k..(r + 1) * k];
                    correct += usize::from(argmax(pr) == labels[r]);
                    for (c, p) in pr.iter_mut().enumerate() {
                        let y = if c == labels[r] { T::one() } else { T::zero() };
                        *p = (*p - y) / bt;
                    }
                }
            }
        }
        (loss / bt, dz, correct)
    }

    /// Backpropagates `dz` (gradient w.r.t. the output pre-activations).
    /// Returns parameter gradients and, if requested, input gradients.
    fn backward(&self, x: &[T], trace: &Trace<T>, mut dz: Vec<T>, want_input: bool) -> (Vec<T>, Vec<T>) {
        let b = trace.batch;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut d_input = Vec::new();
        for li in (0..self.layout.len()).rev() {
            let l = &self.layout[li];
            let input: &[T] = if li == 0 { x } else { trace.layers[li - 1].output() };
            {
                let (gw, rest) = grads[l.weights..].split_at_mut(l.biases - l.weights);
                let gb = &mut rest[..l.width];
                for r in 0..b {
                    let row = &input[r * l.fan_in..(r + 1) * l.fan_in];
                    for o in 0..l.width {
                        let g = dz[r * l.width + o];
                        if g == T::zero() {
                            continue;
                        }
                        gb[o] = gb[o] + g;
                        axpy(g, row, &mut gw[o * l.fan_in..(o + 1) * l.fan_in]);
                    }
                }
            }
            if li == 0 && !want_input {
                break;
            }
            let w = &self.params[l.weights..l.biases];
            let mut din = vec![T::zero(); b * l.fan_in];
            for r in 0..b {
                let dr = &mut din[r * l.fan_in..(r + 1) * l.fan_in];
                for o in 0..l.width {
                    let g = dz[r * l.width + o];
                    if g != T::zero() {
                        axpy(g, &w[o * l.fan_in..(o + 1) * l.fan_in], dr);
                    }
                }
            }
            if li == 0 {
                d_input = din;
                break;
            }
            let prev = &self.layout[li - 1];
            let pt = &trace.layers[li - 1];
            let mut da = match (&pt.norm, prev.norm) {
                (Some(nt), Some(n)) => {
                    self.normalize_backward(nt, n, prev.width, b, trace.mode == Mode::Train, &din, &mut grads)
                }
                _ => din,
            };
            for (k, g) in da.iter_mut().enumerate() {
                *g = *g * activation_derivative(prev.activation, pt.z[k], pt.a[k]);
            }
            dz = da;
        }
        (grads, d_input)
    }

    fn normalize_backward(
        &self,
        nt: &NormTrace<T>,
        n: NormLayout,
        width: usize,
        batch: usize,
        batch_stats: bool,
        dout: &[T],
        grads: &mut [T],
    ) -> Vec<T> {
        let gamma = &self.params[n.gamma..n.gamma + width];
        let mut sum_dxhat = vec![T::zero(); width];
        let mut sum_dxhat_xhat = vec![T::zero(); width];
        for r in 0..batch {
            for j in 0..width {
                let k = r * width + j;
                grads[n.gamma + j] = grads[n.gamma + j] + dout[k] * nt.xhat[k];
                grads[n.beta + j] = grads[n.beta + j] + dout[k];
                let dxhat = dout[k] * gamma[j];
                sum_dxhat[j] = sum_dxhat[j] + dxhat;
                sum_dxhat_xhat[j] = sum_dxhat_xhat[j] + dxhat * nt.xhat[k];
            }
        }
        let mut da = vec![T::zero(); batch * width];
        let bt = T::from_usize_lossy(batch);
        // with running statistics the normalization is an affine map
        for r in 0..batch {
            for j in 0..width {
                let k = r * width + j;
                let dxhat = dout[k] * gamma[j];
                da[k] = if batch_stats {
                    nt.inv_std[j] / bt * (bt * dxhat - sum_dxhat[j] - nt.xhat[k] * sum_dxhat_xhat[j])
                } else {
                    dxhat * nt.inv_std[j]
                };
            }
        }
        da
    }

    fn update_running_stats(&mut self, trace: &Trace<T>) {
        let m = lit::<T>(BN_MOMENTUM);
        for (l, t) in self.layout.iter().zip(&trace.layers) {
            if let (Some(n), Some(nt)) = (l.norm, &t.norm) {
                for j in 0..l.width {
                    let rm = &mut self.state[n.running_mean + j];
                    *rm = m * *rm + (T::one() - m) * nt.mean[j];
                    let rv = &mut self.state[n.running_var + j];
                    *rv = m * *rv + (T::one() - m) * nt.var[j];
                }
            }
        }
    }

    /// Class probabilities: the softmax output, or `[1 - p, p]` for a
    /// sigmoid output.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_dim(x.len())?;
        Ok(self.probabilities(x))
    }

    fn probabilities(&self, x: &[T]) -> Vec<T> {
        let out = self.infer(x);
        if out.len() == 1 {
            vec![T::one() - out[0], out[0]]
        } else {
            out
        }
    }

    /// Raw output activations for one input, without keeping a trace.
    fn infer(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layout {
            next.clear();
            let w = &self.params[l.weights..l.biases];
            next.extend(
                (0..l.width).map(|o| self.params[l.biases + o] + dot(&w[o * l.fan_in..(o + 1) * l.fan_in], &cur)),
            );
            activate(l.activation, &mut next);
            if let Some(n) = l.norm {
                let eps = lit::<T>(BN_EPSILON);
                for (j, v) in next.iter_mut().enumerate() {
                    let mean = self.state[n.running_mean + j];
                    let var = self.state[n.running_var + j];
                    *v = self.params[n.gamma + j] * (*v - mean) / (var + eps).sqrt() + self.params[n.beta + j];
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Argmax of the softmax output (ties to the lowest class), or
    /// `p >= 0.5` for a sigmoid output.
    pub fn predict(&self, x: &[T]) -> Result<usize, ModelError> {
        self.check_dim(x.len())?;
        Ok(self.decide(&self.infer(x)))
    }

    fn decide(&self, out: &[T]) -> usize {
        if out.len() == 1 {
            usize::from(out[0] >= lit(0.5))
        } else {
            argmax(out)
        }
    }

    /// Probabilities for every row (`n x K`).
    pub fn predict_proba_batch(&self, x: &Matrix<T>) -> Result<Matrix<T>, ModelError> {
        self.check_dim(x.cols())?;
        let k = self.num_classes();
        let mut out = Vec::with_capacity(x.rows() * k);
        for chunk in row_chunks(x, 512) {
            let trace = self.forward(chunk.1, chunk.0, Mode::Eval);
            let a = &trace.layers.last().expect("layers").a;
            if k == 2 && a.len() == chunk.0 {
                for &p in a {
                    out.push(T::one() - p);
                    out.push(p);
                }
            } else {
                out.extend_from_slice(a);
            }
        }
        Ok(Matrix::from_vec(x.rows(), k, out).expect("n x K probabilities"))
    }

    pub fn predict_batch(&self, x: &Matrix<T>) -> Result<Vec<usize>, ModelError> {
        self.check_dim(x.cols())?;
        let mut out = Vec::with_capacity(x.rows());
        let width = self.layout.last().expect("layers").width;
        for chunk in row_chunks(x, 512) {
            let trace = self.forward(chunk.1, chunk.0, Mode::Eval);
            let a = &trace.layers.last().expect("layers").a;
            out.extend(a.chunks_exact(width).map(|o| self.decide(o)));
        }
        Ok(out)
    }

    /// Gradient of the per-sample loss w.r.t. the input (inference mode).
    pub fn input_gradient(&self, x: &[T], label: usize) -> Result<Vec<T>, ModelError> {
        self.check_dim(x.len())?;
        self.check_labels(&[label])?;
        let trace = self.forward(x, 1, Mode::Eval);
        let (_, dz, _) = self.output_loss(&trace, &[label]);
        Ok(self.backward(x, &trace, dz, true).1)
    }

    /// Mean loss over the rows of `x`.
    pub fn loss(&self, x: &Matrix<T>, labels: &[usize], mode: Mode) -> Result<T, ModelError> {
        self.check_batch(x, labels)?;
        let trace = self.forward(x.as_slice(), x.rows(), mode);
        Ok(self.output_loss(&trace, labels).0)
    }

    /// Mean loss over the rows of `x` and its gradient w.r.t. every
    /// trainable parameter (flat layout of [`Classifier::parameters`]).
    pub fn loss_and_gradient(&self, x: &Matrix<T>, labels: &[usize], mode: Mode) -> Result<(T, Vec<T>), ModelError> {
        self.check_batch(x, labels)?;
        let trace = self.forward(x.as_slice(), x.rows(), mode);
        let (loss, dz, _) = self.output_loss(&trace, labels);
        Ok((loss, self.backward(x.as_slice(), &trace, dz, false).0))
    }

    fn check_batch(&self, x: &Matrix<T>, labels: &[usize]) -> Result<(), ModelError> {
        self.check_dim(x.cols())?;
        if x.rows() != labels.len() {
            return Err(ModelError::DimensionMismatch {
                expected: x.rows(),
                found: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        self.check_labels(labels)
    }

    /// Mean loss and accuracy on `d` in inference mode.
    pub fn evaluate(&self, d: &Dataset<T>) -> Result<(f64, f64), ModelError> {
        self.check_dim(d.n_features())?;
        self.check_labels(d.labels())?;
        if d.n_rows() == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mut loss = 0.0;
        let mut correct = 0;
        let mut start = 0;
        for (rows, chunk) in row_chunks(d.features(), 512) {
            let trace = self.forward(chunk, rows, Mode::Eval);
            let (l, _, c) = self.output_loss(&trace, &d.labels()[start..start + rows]);
            loss += l.to_f64_lossy() * rows as f64;
            correct += c;
            start += rows;
        }
        let n = d.n_rows() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Mini-batch training with the configured optimizer for
    /// `config.epochs` epochs. Batches are reshuffled every epoch from a
    /// stream derived from `init_seed`. On a non-finite loss the parameters
    /// are rolled back to the start of the failing epoch.
    pub fn train(&mut self, train: &Dataset<T>, val: &Dataset<T>) -> Result<TrainingLog, ModelError> {
        self.check_dim(train.n_features())?;
        self.check_labels(train.labels())?;
        if val.n_rows() > 0 {
            self.check_dim(val.n_features())?;
            self.check_labels(val.labels())?;
        }
        let n = train.n_rows();
        if n == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        let dim = self.input_dim();
        let bs = self.config.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle = rng::substream(self.config.init_seed, 1);
        let mut opt = Optimizer::new(self.config.optimizer, self.config.learning_rate, self.params.len());
        let mut log = TrainingLog::default();
        let mut xb: Vec<T> = Vec::with_capacity(bs * dim);
        let mut yb: Vec<usize> = Vec::with_capacity(bs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut shuffle);
            let snapshot = (self.params.clone(), self.state.clone());
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for chunk in order.chunks(bs) {
                xb.clear();
                yb.clear();
                for &i in chunk {
                    xb.extend_from_slice(train.row(i));
                    yb.push(train.labels()[i]);
                }
                let trace = self.forward(&xb, chunk.len(), Mode::Train);
                let (loss, dz, c) = self.output_loss(&trace, &yb);
                if !loss.is_finite() {
                    self.params = snapshot.0;
                    self.state = snapshot.1;
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                let (grads, _) = self.backward(&xb, &trace, dz, false);
                self.update_running_stats(&trace);
                opt.step(&mut self.params, &grads);
                loss_sum += loss.to_f64_lossy() * chunk.len() as f64;
                correct += c;
            }
            if self.params.iter().chain(&self.state).any(|v| !v.is_finite()) {
                self.params = snapshot.0;
                self.state = snapshot.1;
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            let (val_loss, val_accuracy) = if val.n_rows() > 0 {
                let (l, a) = self.evaluate(val)?;
                (Some(l), Some(a))
            } else {
                (None, None)
            };
            log.epochs.push(EpochRecord {
                epoch,
                train_loss: loss_sum / n as f64,
                train_accuracy: correct as f64 / n as f64,
                val_loss,
                val_accuracy,
            });
        }
        self.trained = true;
        Ok(log)
    }
}

fn row_chunks<T: Copy>(x: &Matrix<T>, rows: usize) -> impl Iterator<Item = (usize, &[T])> {
    let cols = x.cols().max(1);
    x.as_slice().chunks(rows * cols).map(move |c| (c.len() / cols, c))
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn activate<T: Scalar>(activation: Activation, v: &mut [T]) {
    match activation {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
        Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
        Activation::Linear => {}
        Activation::Softmax => {
            let m = v.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in v.iter_mut() {
                *x = (*x - m).exp();
                s = s + *x;
            }
            v.iter_mut().for_each(|x| *x = *x / s);
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn activation_derivative<T: Scalar>(activation: Activation, z: T, a: T) -> T {
    match activation {
        Activation::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Sigmoid => a * (T::one() - a),
        Activation::Linear => T::one(),
        Activation::Softmax => unreachable!("softmax is output-only"),
    }
}

/// Decision oracle queried by black-box attacks.
pub trait Predictor<T> {
    fn input_dim(&self) -> usize;
    /// Predicted class of `x`. `x.len()` must equal [`Predictor::input_dim`].
    fn query(&self, x: &[T]) -> usize;
}

/// Predictor that also exposes the loss gradient w.r.t. its input.
pub trait InputGradient<T>: Predictor<T> {
    fn loss_gradient(&self, x: &[T], label: usize) -> Vec<T>;
}

impl<T: Scalar> Predictor<T> for Classifier<T> {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn query(&self, x: &[T]) -> usize {
        self.predict(x).expect("query dimension checked by caller")
    }
}

impl<T: Scalar> InputGradient<T> for Classifier<T> {
    fn loss_gradient(&self, x: &[T], label: usize) -> Vec<T> {
        self.input_gradient(x, label)
            .expect("gradient dimension checked by caller")
    }
}

impl<T, P: Predictor<T> + ?Sized> Predictor<T> for &P {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn query(&self, x: &[T]) -> usize {
        (**self).query(x)
    }
}

impl<T, P: InputGradient<T> + ?Sized> InputGradient<T> for &P {
    fn loss_gradient(&self, x: &[T], label: usize) -> Vec<T> {
        (**self).loss_gradient(x, label)
    }
}

#[cfg(test)]
mod tests;
