//! Feed-forward networks trained by mini-batch backpropagation.
//!
//! One model type serves every learning task in the crate: binary node
//! classifiers, floor and building classifiers (softmax heads) and coordinate
//! regressors (identity heads). Inputs pass through a stored affine
//! normalization and regression outputs through a stored de-normalization, so
//! a loaded model reproduces training-time behavior exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{NONDETECT, RSSI_MAX};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }

    pub const fn relu(width: usize) -> Self {
        Self::new(width, Activation::Relu)
    }
}

/// `(hidden relu widths..., head)` shorthand.
pub fn architecture(hidden: &[usize], out: usize, head: Activation) -> Vec<LayerSpec> {
    hidden
        .iter()
        .map(|&w| LayerSpec::relu(w))
        .chain(std::iter::once(LayerSpec::new(out, head)))
        .collect()
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("network needs at least one layer".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.width == 0 {
            return Err(Error::InvalidArgument(format!("layer {i} has zero width")));
        }
        if l.activation == Activation::Softmax && i + 1 != layers.len() {
            return Err(Error::InvalidArgument(format!("softmax on hidden layer {i}")));
        }
    }
    Ok(())
}

/// Per-feature affine map `(x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    #[inline]
    fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }
}

/// How input normalization is obtained at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// The same fixed range for every feature.
    Fixed {
        lo: f64,
        hi: f64,
    },
    /// Minimum and maximum over all training input entries, shared by every feature.
    GlobalRange,
    None,
}

impl InputScaling {
    /// Maps `[-105, 0]` dBm onto `[0, 1]`, leaving the non-detection sentinel at 0.
    pub const RSSI: InputScaling = InputScaling::Fixed {
        lo: NONDETECT,
        hi: RSSI_MAX,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation-loss improvement before stopping. Only used
    /// when a validation set is supplied; 0 disables early stopping.
    pub patience: usize,
    pub input_scaling: InputScaling,
    /// Standardize regression targets (mean/std per output) during training.
    pub standardize_targets: bool,
}

impl TrainConfig {
    pub fn classifier(seed: u64) -> Self {
        Self {
            loss: Loss::CrossEntropy,
            optimizer: Optimizer::ADAM,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 40,
            seed,
            patience: 6,
            input_scaling: InputScaling::RSSI,
            standardize_targets: false,
        }
    }

    pub fn regressor(seed: u64) -> Self {
        Self {
            loss: Loss::MeanSquaredError,
            standardize_targets: true,
            epochs: 80,
            patience: 10,
            ..Self::classifier(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Borrowed inputs with owned targets (targets are small).
#[derive(Debug, Clone, Default)]
pub struct TrainingSet<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: Vec<Vec<f64>>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_pairs(pairs: &'a [(Vec<f64>, Vec<f64>)]) -> Self {
        Self {
            inputs: pairs.iter().map(|(x, _)| x.as_slice()).collect(),
            targets: pairs.iter().map(|(_, y)| y.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let din = self.inputs.first().map_or(0, |x| x.len());
        let dout = self.targets.first().map_or(0, |y| y.len());
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            if x.len() != din {
                return Err(Error::DimensionMismatch {
                    expected: din,
                    actual: x.len(),
                });
            }
            if y.len() != dout {
                return Err(Error::DimensionMismatch {
                    expected: dout,
                    actual: y.len(),
                });
            }
        }
        Ok((din, dout))
    }
}

pub fn one_hot(class: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Row-major `width x fan_in` matrices.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: Vec<Affine>,
    pub output_norm: Vec<Affine>,
    pub seed: u64,
}

/// Per-layer pre-activations and activations from one forward pass.
struct Trace {
    /// `acts[0]` is the normalized input; `acts[l + 1]` is layer `l`'s output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(m: &MlpModel) -> Self {
        Self {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn fan_in(input_dim: usize, layers: &[LayerSpec], l: usize) -> usize {
    if l == 0 {
        input_dim
    } else {
        layers[l - 1].width
    }
}

impl MlpModel {
    /// Zero weights and biases, identity normalization.
    pub fn zeros(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input width must be >= 1".into()));
        }
        let weights = (0..layers.len())
            .map(|l| vec![0.0; layers[l].width * fan_in(input_dim, &layers, l)])
            .collect();
        let biases = layers.iter().map(|l| vec![0.0; l.width]).collect();
        let out = layers.last().map_or(0, |l| l.width);
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            input_dim,
            weights,
            biases,
            input_norm: vec![Affine::IDENTITY; input_dim],
            output_norm: vec![Affine::IDENTITY; out],
            layers,
            seed: 0,
        })
    }

    /// He-uniform weights drawn from a generator seeded with `seed`; zero biases.
    pub fn init(input_dim: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(input_dim, layers)?;
        m.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..m.layers.len() {
            let limit = (6.0 / fan_in(input_dim, &m.layers, l) as f64).sqrt();
            for w in m.weights[l].iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Checks shape chaining and normalization invariants.
    pub fn validate(&self) -> Result<()> {
        validate_layers(&self.layers)?;
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if self.weights.len() != self.layers.len() || self.biases.len() != self.layers.len() {
            return bad("parameter count does not match layer count".into());
        }
        for (l, spec) in self.layers.iter().enumerate() {
            if self.weights[l].len() != spec.width * fan_in(self.input_dim, &self.layers, l) {
                return bad(format!("layer {l} weight matrix has wrong shape"));
            }
            if self.biases[l].len() != spec.width {
                return bad(format!("layer {l} bias has wrong length"));
            }
        }
        if self.input_norm.len() != self.input_dim || self.output_norm.len() != self.output_dim() {
            return bad("normalization length mismatch".into());
        }
        if self
            .input_norm
            .iter()
            .chain(&self.output_norm)
            .any(|a| !(a.scale > 0.0))
        {
            return bad("normalization scales must be strictly positive".into());
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.input_norm).map(|(&v, a)| a.apply(v)).collect()
    }

    fn normalize_target(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.output_norm).map(|(&v, a)| a.apply(v)).collect()
    }

    fn trace(&self, xn: Vec<f64>) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(xn);
        for (l, spec) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let n_in = input.len();
            let w = &self.weights[l];
            let z: Vec<f64> = (0..spec.width)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    self.biases[l][o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let a = activate(spec.activation, &z);
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Network output; regression heads are mapped back to target units.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut t = self.trace(self.normalize_input(x));
        let mut out = t.acts.pop().unwrap_or_default();
        if self.layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
            for (v, a) in out.iter_mut().zip(&self.output_norm) {
                *v = a.invert(*v);
            }
        }
        Ok(out)
    }

    /// Argmax of the output; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }

    /// Mean loss over `data`, in normalized target units.
    pub fn loss(&self, data: &TrainingSet<'_>, loss: Loss) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            self.check_input(x)?;
            let t = self.trace(self.normalize_input(x));
            total += sample_loss(self, &t, &self.normalize_target(y), loss);
        }
        Ok(total / data.len() as f64)
    }

    /// Fraction of samples whose argmax matches the argmax of the target.
    pub fn accuracy(&self, data: &TrainingSet<'_>) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            hits += usize::from(self.predict_class(x)? == argmax(y));
        }
        Ok(hits as f64 / data.len() as f64)
    }

    fn accumulate(&self, x: &[f64], y: &[f64], loss: Loss, grads: &mut Gradients) -> f64 {
        let t = self.trace(self.normalize_input(x));
        let yn = self.normalize_target(y);
        let value = sample_loss(self, &t, &yn, loss);
        let last = self.layers.len() - 1;
        let out = &t.acts[last + 1];
        let mut delta: Vec<f64> = match (self.layers[last].activation, loss) {
            (Activation::Softmax, Loss::CrossEntropy) => {
                let ysum: f64 = yn.iter().sum();
                out.iter().zip(&yn).map(|(p, y)| p * ysum - y).collect()
            }
            (act, _) => {
                let g: Vec<f64> = out.iter().zip(&yn).map(|(o, y)| o - y).collect();
                backprop_activation(act, &t.pre[last], out, &g)
            }
        };
        for l in (0..=last).rev() {
            let input = &t.acts[l];
            let n_in = input.len();
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grads.biases[l][o] += d;
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut back = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        for (b, &wv) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *b += d * wv;
                        }
                    }
                }
                let act = self.layers[l - 1].activation;
                delta = backprop_activation(act, &t.pre[l - 1], &t.acts[l], &back);
            }
        }
        value
    }

    /// Analytic gradient of [`MlpModel::loss`] with respect to every parameter.
    pub fn gradients(&self, data: &TrainingSet<'_>, loss: Loss) -> Result<Gradients> {
        check_loss_head(&self.layers, loss)?;
        let mut g = Gradients::zeros_like(self);
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            self.check_input(x)?;
            if y.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_dim(),
                    actual: y.len(),
                });
            }
            self.accumulate(x, y, loss, &mut g);
        }
        if !data.is_empty() {
            g.scale(1.0 / data.len() as f64);
        }
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MlpModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        m.validate()?;
        Ok(m)
    }

    /// SHA-256 of the serialized model.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    fn relu_mask(&self, data: &TrainingSet<'_>) -> Vec<bool> {
        let mut mask = Vec::new();
        for x in &data.inputs {
            let t = self.trace(self.normalize_input(x));
            for (l, spec) in self.layers.iter().enumerate() {
                if spec.activation == Activation::Relu {
                    mask.extend(t.pre[l].iter().map(|&z| z > 0.0));
                }
            }
        }
        mask
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut i = idx;
        for l in 0..self.layers.len() {
            if i < self.weights[l].len() {
                return &mut self.weights[l][i];
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                return &mut self.biases[l][i];
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index {idx} out of range");
    }
}

fn check_loss_head(layers: &[LayerSpec], loss: Loss) -> Result<()> {
    if loss == Loss::CrossEntropy && layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
        return Err(Error::InvalidArgument(
            "cross-entropy loss requires a softmax head".into(),
        ));
    }
    Ok(())
}

fn activate(act: Activation, z: &[f64]) -> Vec<f64> {
    match act {
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Identity => z.to_vec(),
        Activation::Softmax => softmax(z),
    }
}

fn backprop_activation(act: Activation, pre: &[f64], out: &[f64], g: &[f64]) -> Vec<f64> {
    match act {
        Activation::Relu => g
            .iter()
            .zip(pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Identity => g.to_vec(),
        Activation::Softmax => {
            let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
            out.iter().zip(g).map(|(s, g)| s * (g - dot)).collect()
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sample_loss(m: &MlpModel, t: &Trace, yn: &[f64], loss: Loss) -> f64 {
    let last = m.layers.len() - 1;
    match loss {
        Loss::CrossEntropy => {
            let z = &t.pre[last];
            let lse = log_sum_exp(z);
            -yn.iter().zip(z).map(|(y, z)| y * (z - lse)).sum::<f64>()
        }
        Loss::MeanSquaredError => {
            0.5 * t.acts[last + 1]
                .iter()
                .zip(yn)
                .map(|(o, y)| (o - y).powi(2))
                .sum::<f64>()
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn fit_input_norm(data: &TrainingSet<'_>, dim: usize, scaling: InputScaling) -> Vec<Affine> {
    let affine = match scaling {
        InputScaling::Fixed { lo, hi } => Affine {
            shift: lo,
            scale: if hi > lo { hi - lo } else { 1.0 },
        },
        InputScaling::GlobalRange => {
            let (lo, hi) = data
                .inputs
                .iter()
                .flat_map(|x| x.iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            Affine {
                shift: if lo.is_finite() { lo } else { 0.0 },
                scale: if hi > lo { hi - lo } else { 1.0 },
            }
        }
        InputScaling::None => Affine::IDENTITY,
    };
    vec![affine; dim]
}

fn fit_output_norm(data: &TrainingSet<'_>, dim: usize, standardize: bool) -> Vec<Affine> {
    if !standardize || data.is_empty() {
        return vec![Affine::IDENTITY; dim];
    }
    let n = data.len() as f64;
    (0..dim)
        .map(|k| {
            let mean = data.targets.iter().map(|y| y[k]).sum::<f64>() / n;
            let var = data.targets.iter().map(|y| (y[k] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            Affine {
                shift: mean,
                scale: if sd > 1e-12 { sd } else { 1.0 },
            }
        })
        .collect()
}

struct OptimizerState {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl OptimizerState {
    fn new(model: &MlpModel) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut MlpModel, g: &Gradients, opt: Optimizer, lr: f64) {
        self.step += 1;
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let grads = g.weights.iter().chain(&g.biases);
        let ms = self.m.weights.iter_mut().chain(self.m.biases.iter_mut());
        let vs = self.v.weights.iter_mut().chain(self.v.biases.iter_mut());
        match opt {
            Optimizer::Sgd { momentum } => {
                for ((p, g), m) in params.zip(grads).zip(ms) {
                    for ((p, g), m) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                        *m = momentum * *m + g;
                        *p -= lr * *m;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.zip(grads).zip(ms).zip(vs) {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Trains a fresh network for the full epoch budget.
pub fn train(data: &TrainingSet<'_>, cfg: &TrainConfig, spec: &[LayerSpec]) -> Result<MlpModel> {
    train_with_validation(data, None, cfg, spec)
}

/// Trains a fresh network. With a validation set and nonzero patience, stops
/// once validation loss has not improved for `patience` epochs and returns
/// the best-scoring parameters.
pub fn train_with_validation(
    data: &TrainingSet<'_>,
    validation: Option<&TrainingSet<'_>>,
    cfg: &TrainConfig,
    spec: &[LayerSpec],
) -> Result<MlpModel> {
    cfg.validate()?;
    validate_layers(spec)?;
    check_loss_head(spec, cfg.loss)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let (din, dout) = data.dims()?;
    let head = spec.last().map_or(0, |l| l.width);
    if dout != head {
        return Err(Error::DimensionMismatch {
            expected: head,
            actual: dout,
        });
    }
    if let Some(v) = validation {
        let (vi, vo) = v.dims()?;
        if !v.is_empty() && (vi != din || vo != dout) {
            return Err(Error::DimensionMismatch {
                expected: din,
                actual: vi,
            });
        }
    }

    let mut model = MlpModel::init(din, spec.to_vec(), cfg.seed)?;
    model.input_norm = fit_input_norm(data, din, cfg.input_scaling);
    let standardize = cfg.standardize_targets && cfg.loss == Loss::MeanSquaredError;
    model.output_norm = fit_output_norm(data, dout, standardize);

    // Weight init consumed the seed's first stream; shuffling uses its own.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut state = OptimizerState::new(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let validation = validation.filter(|v| !v.is_empty() && cfg.patience > 0);
    let mut best: Option<(f64, MlpModel)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Gradients::zeros_like(&model);
            for &i in batch {
                epoch_loss += model.accumulate(data.inputs[i], &data.targets[i], cfg.loss, &mut g);
            }
            g.scale(1.0 / batch.len() as f64);
            state.apply(&mut model, &g, cfg.optimizer, cfg.learning_rate);
        }
        epoch_loss /= data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        if let Some(v) = validation {
            let vl = model.loss(v, cfg.loss)?;
            if !vl.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            match &best {
                Some((b, _)) if vl >= *b => {
                    stale += 1;
                    if stale >= cfg.patience {
                        log::debug!("early stop at epoch {epoch}, best validation loss {b:.6}");
                        break;
                    }
                }
                _ => {
                    best = Some((vl, model.clone()));
                    stale = 0;
                }
            }
        }
    }
    if !model.weights.iter().flatten().all(|w| w.is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            learning_rate: cfg.learning_rate,
        });
    }
    Ok(best.map_or(model, |(_, m)| m))
}

/// Result of comparing analytic gradients to central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because the perturbation flipped a ReLU.
    pub skipped_kinks: usize,
}

/// Compares [`MlpModel::gradients`] against central differences over all
/// parameters.
pub fn gradient_check(model: &MlpModel, batch: &TrainingSet<'_>, loss: Loss, epsilon: f64) -> Result<GradientCheck> {
    let analytic = model.gradients(batch, loss)?;
    compare_gradients(model, batch, loss, epsilon, &analytic)
}

/// Finite-difference comparison against caller-supplied gradients.
pub fn compare_gradients(
    model: &MlpModel,
    batch: &TrainingSet<'_>,
    loss: Loss,
    epsilon: f64,
    analytic: &Gradients,
) -> Result<GradientCheck> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1e-3]")));
    }
    let flat: Vec<f64> = analytic
        .weights
        .iter()
        .zip(&analytic.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
        .collect();
    if flat.len() != model.parameter_count() {
        return Err(Error::DimensionMismatch {
            expected: model.parameter_count(),
            actual: flat.len(),
        });
    }
    let base_mask = model.relu_mask(batch);
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for (idx, &a) in flat.iter().enumerate() {
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + epsilon;
        let plus = probe.loss(batch, loss)?;
        let kink = probe.relu_mask(batch) != base_mask;
        *probe.param_mut(idx) = orig - epsilon;
        let minus = probe.loss(batch, loss)?;
        let kink = kink || probe.relu_mask(batch) != base_mask;
        *probe.param_mut(idx) = orig;
        if kink {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        out.max_relative_error = out.max_relative_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (vec![0.0, 0.0], one_hot(0, 2)),
            (vec![0.0, 1.0], one_hot(1, 2)),
            (vec![1.0, 0.0], one_hot(1, 2)),
            (vec![1.0, 1.0], one_hot(0, 2)),
        ]
    }

    fn xor_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.02,
            batch_size: 4,
            epochs: 2000,
            input_scaling: InputScaling::None,
            ..TrainConfig::classifier(7)
        }
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let m = MlpModel::zeros(3, vec![LayerSpec::new(2, Activation::Softmax)]).unwrap();
        assert_eq!(m.forward(&[0.3, -1.0, 9.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_is_identity_map() {
        let mut m = MlpModel::zeros(3, vec![LayerSpec::new(3, Activation::Identity)]).unwrap();
        m.weights[0] = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = [0.25, -7.0, 3.5];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_set_two_two_two_network() {
        // hidden relu: W1 = [[1, -1], [0.5, 2]], b1 = [0, -0.25]
        //   x = (1, 0) -> z1 = (1, 0.25) -> h = (1, 0.25)
        // softmax: W2 = [[2, 0], [0, 4]], b2 = [0, 0] -> z2 = (2, 1)
        //   p0 = e^2 / (e^2 + e^1) = 1 / (1 + e^-1) = 0.7310585786300049
        let mut m = MlpModel::zeros(2, vec![LayerSpec::relu(2), LayerSpec::new(2, Activation::Softmax)]).unwrap();
        m.weights[0] = vec![1.0, -1.0, 0.5, 2.0];
        m.biases[0] = vec![0.0, -0.25];
        m.weights[1] = vec![2.0, 0.0, 0.0, 4.0];
        let out = m.forward(&[1.0, 0.0]).unwrap();
        assert!((out[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((out[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::zeros(3, vec![LayerSpec::new(2, Activation::Softmax)]).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn softmax_only_on_last_layer() {
        let spec = vec![
            LayerSpec::new(2, Activation::Softmax),
            LayerSpec::new(2, Activation::Identity),
        ];
        assert!(MlpModel::zeros(2, spec).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.9, 0.1]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn xor_is_learned() {
        let data = xor();
        let set = TrainingSet::from_pairs(&data);
        let m = train(&set, &xor_config(), &architecture(&[8], 2, Activation::Softmax)).unwrap();
        assert_eq!(m.accuracy(&set).unwrap(), 1.0);
        assert_eq!(m.predict_class(&[1.0, 1.0]).unwrap(), 0);
        assert_eq!(m.predict_class(&[0.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn single_point_regression_converges() {
        let data = vec![(vec![-60.0, -105.0, -80.0], vec![-7500.0, 4_864_900.0])];
        let set = TrainingSet::from_pairs(&data);
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..TrainConfig::regressor(3)
        };
        let m = train(&set, &cfg, &architecture(&[8], 2, Activation::Identity)).unwrap();
        let p = m.predict_vector(&data[0].0).unwrap();
        assert!((p[0] + 7500.0).abs() < 1e-3, "{p:?}");
        assert!((p[1] - 4_864_900.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn linear_fit_recovers_slope() {
        // Closed-form least squares on y = 2x through the origin gives slope exactly 2.
        let data: Vec<_> = (-10..=10)
            .map(|i| (vec![i as f64 / 10.0], vec![2.0 * i as f64 / 10.0]))
            .collect();
        let set = TrainingSet::from_pairs(&data);
        let sxy: f64 = data.iter().map(|(x, y)| x[0] * y[0]).sum();
        let sxx: f64 = data.iter().map(|(x, _)| x[0] * x[0]).sum();
        let oracle = sxy / sxx;
        let cfg = TrainConfig {
            loss: Loss::MeanSquaredError,
            learning_rate: 0.05,
            batch_size: 21,
            epochs: 600,
            input_scaling: InputScaling::None,
            standardize_targets: false,
            ..TrainConfig::classifier(11)
        };
        let m = train(&set, &cfg, &[LayerSpec::new(1, Activation::Identity)]).unwrap();
        assert!((m.weights[0][0] - oracle).abs() < 1e-2, "{}", m.weights[0][0]);
        assert!((oracle - 2.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = xor();
        let set = TrainingSet::from_pairs(&data);
        let cfg = TrainConfig {
            epochs: 50,
            ..xor_config()
        };
        let spec = architecture(&[8], 2, Activation::Softmax);
        let a = train(&set, &cfg, &spec).unwrap().to_json().unwrap();
        let b = train(&set, &cfg, &spec).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let c = train(&set, &TrainConfig { seed: 8, ..cfg }, &spec)
            .unwrap()
            .to_json()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn serialized_model_round_trips_exactly() {
        let m = MlpModel::init(5, architecture(&[7, 3], 2, Activation::Identity), 42).unwrap();
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let x = [0.1, -0.7, 1e-9, 3.0, -2.5];
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<_> = (0..8).map(|i| (vec![i as f64 * 100.0], vec![i as f64 * 1e6])).collect();
        let set = TrainingSet::from_pairs(&data);
        let cfg = TrainConfig {
            loss: Loss::MeanSquaredError,
            optimizer: Optimizer::Sgd { momentum: 0.0 },
            learning_rate: 10.0,
            batch_size: 8,
            epochs: 200,
            input_scaling: InputScaling::None,
            standardize_targets: false,
            ..TrainConfig::classifier(1)
        };
        match train(&set, &cfg, &[LayerSpec::new(1, Activation::Identity)]) {
            Err(Error::Divergence { learning_rate, .. }) => assert_eq!(learning_rate, 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_needs_softmax_head() {
        let data = xor();
        let set = TrainingSet::from_pairs(&data);
        assert!(train(&set, &xor_config(), &[LayerSpec::new(2, Activation::Identity)]).is_err());
    }

    #[test]
    fn gradient_check_small_random_network() {
        let m = MlpModel::init(4, architecture(&[6, 5], 3, Activation::Softmax), 5).unwrap();
        let xs = [vec![0.1, 0.9, 0.3, 0.0], vec![1.0, 0.2, 0.5, 0.7]];
        let set = TrainingSet::new(
            xs.iter().map(Vec::as_slice).collect(),
            vec![one_hot(2, 3), one_hot(0, 3)],
        )
        .unwrap();
        let gc = gradient_check(&m, &set, Loss::CrossEntropy, 1e-5).unwrap();
        assert!(gc.max_relative_error < 1e-6, "{gc:?}");
        assert!(gc.checked > 0);
    }

    #[test]
    fn gradient_check_linear_quadratic_is_exact() {
        let m = MlpModel::init(3, vec![LayerSpec::new(2, Activation::Identity)], 9).unwrap();
        let xs = [vec![0.5, -1.0, 2.0]];
        let set = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![vec![1.0, -1.0]]).unwrap();
        let gc = gradient_check(&m, &set, Loss::MeanSquaredError, 1e-5).unwrap();
        assert!(gc.max_relative_error < 1e-9, "{gc:?}");
        assert_eq!(gc.skipped_kinks, 0);
    }

    #[test]
    fn gradient_check_catches_corruption() {
        let m = MlpModel::init(3, architecture(&[4], 2, Activation::Identity), 2).unwrap();
        let xs = [vec![0.5, -1.0, 2.0], vec![0.1, 0.2, 0.3]];
        let set = TrainingSet::new(
            xs.iter().map(Vec::as_slice).collect(),
            vec![vec![1.0, -1.0], vec![0.0, 2.0]],
        )
        .unwrap();
        let mut g = m.gradients(&set, Loss::MeanSquaredError).unwrap();
        g.weights[0][3] += 0.1;
        let gc = compare_gradients(&m, &set, Loss::MeanSquaredError, 1e-5, &g).unwrap();
        assert!(gc.max_relative_error > 1e-2, "{gc:?}");
    }

    #[test]
    fn gradient_check_rejects_large_epsilon() {
        let m = MlpModel::init(1, vec![LayerSpec::new(1, Activation::Identity)], 0).unwrap();
        let xs = [vec![1.0]];
        let set = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![vec![1.0]]).unwrap();
        assert!(gradient_check(&m, &set, Loss::MeanSquaredError, 1e-2).is_err());
    }
}
