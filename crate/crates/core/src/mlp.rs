//! Two-hidden-layer tanh perceptron, trained with softmax cross-entropy
//! and Adam.
//!
//! Shapes follow the usual dense-layer convention: each layer stores a
//! row-major `fan_out x fan_in` weight matrix and a `fan_out` bias vector.
//! Batches are row-major `batch x features` slices.
//!
//! All reductions run in a fixed order, so training is bit-reproducible on
//! a given machine.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::response::{FrequencyGrid, MicClass};
use crate::{Error, Result};

/// Hidden layer widths of the reference network.
pub const HIDDEN: [usize; 2] = [25, 12];

/// `[n_in, 25, 12, 3]`.
pub fn network_dims(n_in: usize) -> Vec<usize> {
    vec![n_in, HIDDEN[0], HIDDEN[1], MicClass::COUNT]
}

/// Weights and biases of one dense layer. Also used as the container for
/// gradients and Adam moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major, `fan_out x fan_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { fan_in, fan_out, weights: vec![0.0; fan_in * fan_out], biases: vec![0.0; fan_out] }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.fan_in..(o + 1) * self.fan_in]
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.fan_in == other.fan_in
            && self.fan_out == other.fan_out
            && self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
    }

    fn fill(&mut self, v: f64) {
        self.values_mut().for_each(|x| *x = v);
    }
}

fn zeros_like(layers: &[Dense]) -> Vec<Dense> {
    layers.iter().map(|l| Dense::zeros(l.fan_in, l.fan_out)).collect()
}

fn shapes_match(a: &[Dense], b: &[Dense]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
}

/// The network plus whatever is needed to classify a raw sweep on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    pub layers: Vec<Dense>,
    pub norm: Option<NormStats>,
    pub grid: Option<FrequencyGrid>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() != 4 || dims[3] != MicClass::COUNT || dims.contains(&0) {
        return Err(Error::Shape(format!(
            "layer sizes must be [n_in, h1, h2, {}] with every entry > 0, got {dims:?}",
            MicClass::COUNT
        )));
    }
    Ok(())
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(MlpModel { dims: dims.to_vec(), layers, norm: None, grid: None })
    }

    pub fn n_inputs(&self) -> usize {
        self.dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::values)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(&self.dims)?;
        if self.layers.len() != 3 {
            return Err(Error::Shape(format!("expected 3 layers, found {}", self.layers.len())));
        }
        for (i, (l, w)) in self.layers.iter().zip(self.dims.windows(2)).enumerate() {
            if l.fan_in != w[0]
                || l.fan_out != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.biases.len() != w[1]
            {
                return Err(Error::Shape(format!("layer {i} does not match dims {:?}", self.dims)));
            }
        }
        if let Some(n) = &self.norm {
            if n.len() != self.dims[0] {
                return Err(Error::Shape(format!(
                    "normalization covers {} features, model takes {}",
                    n.len(),
                    self.dims[0]
                )));
            }
        }
        if let Some(g) = &self.grid {
            if 2 * g.count != self.dims[0] {
                return Err(Error::Shape(format!(
                    "grid of {} points gives {} features, model takes {}",
                    g.count,
                    2 * g.count,
                    self.dims[0]
                )));
            }
        }
        if !self.all_finite() {
            return Err(Error::Numerical("model has non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights in `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`,
/// zero biases.
pub fn xavier_init(dims: &[usize], seed: u64) -> Result<MlpModel> {
    let mut model = MlpModel::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        let limit = xavier_limit(layer.fan_in, layer.fan_out);
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in &mut layer.weights {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(model)
}

pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Adam hyperparameters and the epoch/batch schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

/// Exactly-one-hot class target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneHot([f64; MicClass::COUNT]);

impl OneHot {
    pub fn new(values: [f64; MicClass::COUNT]) -> Result<Self> {
        let ones = values.iter().filter(|v| **v == 1.0).count();
        let zeros = values.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || zeros != MicClass::COUNT - 1 {
            return Err(Error::InvalidParameter(format!("{values:?} is not one-hot")));
        }
        Ok(OneHot(values))
    }

    pub fn class(self) -> MicClass {
        let i = self.0.iter().position(|v| *v == 1.0).expect("one-hot invariant");
        MicClass::ALL[i]
    }

    pub fn values(&self) -> &[f64; MicClass::COUNT] {
        &self.0
    }
}

impl From<MicClass> for OneHot {
    fn from(c: MicClass) -> Self {
        let mut v = [0.0; MicClass::COUNT];
        v[c.index()] = 1.0;
        OneHot(v)
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// `exp(z_k - max z)` for every k, their sum, and the index of the max.
fn shifted_exps(z: &[f64], out: &mut [f64]) -> (usize, f64) {
    let top = argmax(z);
    let m = z[top];
    let mut rest = 0.0;
    for (k, (o, v)) in out.iter_mut().zip(z).enumerate() {
        *o = (v - m).exp();
        if k != top {
            rest += *o;
        }
    }
    (top, rest)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    let (_, rest) = shifted_exps(logits, &mut p);
    let sum = 1.0 + rest;
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// `log(sum exp z)`, written as `max + ln_1p(rest)` so that confident
/// predictions keep full relative precision in the loss.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let mut buf = [0.0; 8];
    let mut heap;
    let scratch: &mut [f64] = if logits.len() <= buf.len() {
        &mut buf[..logits.len()]
    } else {
        heap = vec![0.0; logits.len()];
        &mut heap
    };
    let (top, rest) = shifted_exps(logits, scratch);
    logits[top] + rest.ln_1p()
}

/// Fused softmax cross-entropy, `logsumexp(z) - z_true`.
pub fn cross_entropy_with_logits(logits: &[f64], target: &OneHot) -> f64 {
    class_loss(logits, target.class())
}

fn class_loss(logits: &[f64], class: MicClass) -> f64 {
    let mut buf = [0.0; MicClass::COUNT];
    let (top, rest) = shifted_exps(logits, &mut buf);
    // When the target holds the max, logsumexp - z_true is exactly ln_1p(rest).
    let gap = logits[top] - logits[class.index()];
    gap + rest.ln_1p()
}

/// `softmax(z) - onehot(class)` without the `p - 1` cancellation on the
/// true class.
fn softmax_minus_target(logits: &[f64], class: MicClass, out: &mut [f64]) {
    let (_, rest) = shifted_exps(logits, out);
    let sum = 1.0 + rest;
    out.iter_mut().for_each(|x| *x /= sum);
    let t = class.index();
    let others: f64 = out.iter().enumerate().filter(|(k, _)| *k != t).map(|(_, p)| p).sum();
    out[t] = -others;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[s] = W * input[s] + b` for every sample row.
fn affine(layer: &Dense, input: &[f64], out: &mut [f64]) {
    for (x, z) in input.chunks_exact(layer.fan_in).zip(out.chunks_exact_mut(layer.fan_out)) {
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = layer.biases[o] + dot(layer.row(o), x);
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub batch: usize,
    /// Copy of the input batch.
    pub input: Vec<f64>,
    /// Post-tanh outputs of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
    /// Output layer pre-activations, `batch x 3`.
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn logits_row(&self, s: usize) -> &[f64] {
        &self.logits[s * MicClass::COUNT..(s + 1) * MicClass::COUNT]
    }

    /// Output of layer `l` (0 = the input batch).
    fn activation(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.hidden[l - 1]
        }
    }
}

/// Forward pass over a row-major batch.
pub fn forward(model: &MlpModel, x: &[f64]) -> Result<ForwardCache> {
    let mut cache = ForwardCache::default();
    forward_into(model, x, &mut cache)?;
    Ok(cache)
}

/// [`forward`] reusing the buffers of an existing cache.
pub fn forward_into(model: &MlpModel, x: &[f64], cache: &mut ForwardCache) -> Result<()> {
    let n_in = model.n_inputs();
    if !x.len().is_multiple_of(n_in) {
        return Err(Error::Shape(format!("input of length {} is not a multiple of {n_in}", x.len())));
    }
    let batch = x.len() / n_in;
    cache.batch = batch;
    cache.input.clear();
    cache.input.extend_from_slice(x);
    let n_hidden = model.layers.len() - 1;
    cache.hidden.resize_with(n_hidden, Vec::new);
    for (l, layer) in model.layers.iter().enumerate() {
        let mut out = if l < n_hidden {
            std::mem::take(&mut cache.hidden[l])
        } else {
            std::mem::take(&mut cache.logits)
        };
        out.resize(batch * layer.fan_out, 0.0);
        affine(layer, cache.activation(l), &mut out);
        if l < n_hidden {
            out.iter_mut().for_each(|v| *v = v.tanh());
            cache.hidden[l] = out;
        } else {
            cache.logits = out;
        }
    }
    Ok(())
}

/// Parameter gradients, one [`Dense`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients { layers: zeros_like(&model.layers) }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::values)
    }
}

/// Mean-over-batch gradient of the cross-entropy loss.
pub fn backward(model: &MlpModel, cache: &ForwardCache, labels: &[MicClass]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = BackwardScratch::default();
    backward_into(model, cache, labels, &mut grads, &mut scratch)?;
    Ok(grads)
}

/// Reusable delta buffers for [`backward_into`].
#[derive(Debug, Default)]
pub struct BackwardScratch {
    delta: Vec<f64>,
    prev: Vec<f64>,
}

/// [`backward`] writing into preallocated gradients.
pub fn backward_into(
    model: &MlpModel,
    cache: &ForwardCache,
    labels: &[MicClass],
    grads: &mut Gradients,
    scratch: &mut BackwardScratch,
) -> Result<()> {
    let batch = cache.batch;
    if labels.len() != batch || cache.logits.len() != batch * MicClass::COUNT || batch == 0 {
        return Err(Error::Shape(format!(
            "{} labels for a cached batch of {batch}",
            labels.len()
        )));
    }
    if !shapes_match(&grads.layers, &model.layers) || cache.input.len() != batch * model.n_inputs() {
        return Err(Error::Shape("cache or gradient buffers do not match the model".into()));
    }
    grads.layers.iter_mut().for_each(|g| g.fill(0.0));

    let scale = 1.0 / batch as f64;
    let delta = &mut scratch.delta;
    delta.resize(batch * MicClass::COUNT, 0.0);
    for (s, &label) in labels.iter().enumerate() {
        let d = &mut delta[s * MicClass::COUNT..(s + 1) * MicClass::COUNT];
        softmax_minus_target(cache.logits_row(s), label, d);
        d.iter_mut().for_each(|v| *v *= scale);
    }

    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let grad = &mut grads.layers[l];
        let input = cache.activation(l);
        for (d, x) in delta.chunks_exact(layer.fan_out).zip(input.chunks_exact(layer.fan_in)) {
            for (o, &dv) in d.iter().enumerate() {
                axpy(dv, x, &mut grad.weights[o * layer.fan_in..(o + 1) * layer.fan_in]);
                grad.biases[o] += dv;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through W, then through tanh' = 1 - a^2.
        let prev = &mut scratch.prev;
        prev.clear();
        prev.resize(batch * layer.fan_in, 0.0);
        for (d, p) in delta.chunks_exact(layer.fan_out).zip(prev.chunks_exact_mut(layer.fan_in)) {
            for (o, &dv) in d.iter().enumerate() {
                axpy(dv, layer.row(o), p);
            }
        }
        for (p, a) in prev.iter_mut().zip(input) {
            *p *= 1.0 - a * a;
        }
        std::mem::swap(delta, prev);
    }
    Ok(())
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Dense>,
    pub second: Vec<Dense>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState { first: zeros_like(&model.layers), second: zeros_like(&model.layers), t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !shapes_match(&model.layers, &grads.layers)
        || !shapes_match(&model.layers, &state.first)
        || !shapes_match(&model.layers, &state.second)
    {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
    for l in 0..model.layers.len() {
        let params = model.layers[l].values_mut();
        let g = grads.layers[l].values();
        let m = state.first[l].values_mut();
        let v = state.second[l].values_mut();
        for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Class with the largest probability (lowest index on ties) and the
/// softmax probabilities. Features must already be normalized.
pub fn predict(model: &MlpModel, features: &[f64]) -> Result<(MicClass, [f64; MicClass::COUNT])> {
    if features.len() != model.n_inputs() {
        return Err(Error::Shape(format!(
            "record has {} features, model takes {}",
            features.len(),
            model.n_inputs()
        )));
    }
    let cache = forward(model, features)?;
    Ok(classify_logits(cache.logits_row(0)))
}

pub(crate) fn classify_logits(logits: &[f64]) -> (MicClass, [f64; MicClass::COUNT]) {
    let p = softmax(logits);
    let mut probs = [0.0; MicClass::COUNT];
    probs.copy_from_slice(&p);
    (MicClass::ALL[argmax(logits)], probs)
}

/// Mean cross-entropy of a batch.
pub fn batch_loss(model: &MlpModel, x: &[f64], labels: &[MicClass]) -> Result<f64> {
    let cache = forward(model, x)?;
    if labels.len() != cache.batch {
        return Err(Error::Shape(format!("{} labels for a batch of {}", labels.len(), cache.batch)));
    }
    let total: f64 = labels.iter().enumerate().map(|(s, &c)| class_loss(cache.logits_row(s), c)).sum();
    Ok(total / cache.batch as f64)
}

/// Per-sample loss and correctness for a forward pass.
pub(crate) fn score_batch(cache: &ForwardCache, labels: &[MicClass]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    for (s, &c) in labels.iter().enumerate() {
        let z = cache.logits_row(s);
        loss += class_loss(z, c);
        if argmax(z) == c.index() {
            correct += 1;
        }
    }
    (loss, correct)
}

/// Largest relative disagreement between [`backward`] and central finite
/// differences of [`batch_loss`], over every parameter.
pub fn gradient_check(model: &MlpModel, x: &[f64], labels: &[MicClass], step: f64) -> Result<f64> {
    let cache = forward(model, x)?;
    let analytic: Vec<f64> = backward(model, &cache, labels)?.values().copied().collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let original = *probe.params().nth(k).expect("parameter index");
        set_param(&mut probe, k, original + step);
        let plus = batch_loss(&probe, x, labels)?;
        set_param(&mut probe, k, original - step);
        let minus = batch_loss(&probe, x, labels)?;
        set_param(&mut probe, k, original);
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn set_param(model: &mut MlpModel, k: usize, value: f64) {
    *model.params_mut().nth(k).expect("parameter index") = value;
}
