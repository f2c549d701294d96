//! Three-stage network `M = l ∘ s ∘ f`.
//!
//! * `f`: feature extractor: affine layers, each followed by ReLU (so features are nonnegative).
//! * `s`: sphere projector: affine, ReLU, affine, then L2 normalization.
//! * `l`: classifier: one affine layer followed by softmax.
//!
//! All batched math runs sequentially in a fixed order, so identical inputs and parameters give
//! bitwise-identical outputs and gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Denominator guard for the L2 normalization of the sphere projector.
pub const SPHERE_EPS: f64 = 1e-12;
/// Floor applied to log-probabilities inside the cross entropy.
pub const LOG_PROB_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    /// Width of the hidden layer(s) of `f`.
    pub hidden_dim: usize,
    /// Number of affine layers in `f` (2 or 3).
    pub extractor_layers: usize,
    /// Output width of `f` (d1).
    pub feature_dim: usize,
    pub projector_hidden: usize,
    /// Output width of `s` (d2).
    pub sphere_dim: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(in_dim: usize, classes: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 64,
            extractor_layers: 2,
            feature_dim: 32,
            projector_hidden: 32,
            sphere_dim: 16,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_dim,
            self.hidden_dim,
            self.feature_dim,
            self.projector_hidden,
            self.sphere_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("model needs at least two classes".into()));
        }
        if !(1..=4).contains(&self.extractor_layers) {
            return Err(Error::Config("extractor_layers must be in 1..=4".into()));
        }
        Ok(())
    }
}

/// Fully connected layer `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(vec![output, input]), bias: vec![0.0; output] }
    }

    /// Uniform fan-in initialization in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        for b in &mut layer.bias {
            *b = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let (n, out) = (x.rows(), self.output_dim());
        let mut y = Vec::with_capacity(n * out);
        for row in x.iter_rows() {
            for o in 0..out {
                y.push(dot(self.weight.row(o), row) + self.bias[o]);
            }
        }
        Tensor::matrix(n, out, y).expect("affine output shape")
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient w.r.t. the input.
    fn backward(&self, input: &Tensor, dy: &Tensor, grad: &mut Affine) -> Tensor {
        let out = self.output_dim();
        let mut dx = Tensor::zeros(vec![input.rows(), self.input_dim()]);
        for r in 0..input.rows() {
            let dyr = dy.row(r);
            let xr = input.row(r);
            for o in 0..out {
                let g = dyr[o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                axpy(g, xr, grad.weight.row_mut(o));
                axpy(g, self.weight.row(o), dx.row_mut(r));
            }
        }
        dx
    }
}

/// Parameters of the full network. Layers are visited in the order `f`, `s`, `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: Vec<Affine>,
    pub projector: Vec<Affine>,
    pub classifier: Affine,
}

/// Gradients with the same layout as [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<Affine>,
    pub projector: Vec<Affine>,
    pub classifier: Affine,
}

struct Trace {
    /// Input of every affine layer, in visiting order.
    inputs: Vec<Tensor>,
    /// Pre-activation output of every ReLU-followed layer.
    pre_relu: Vec<Tensor>,
    /// Sphere projector output before normalization.
    unnormalized: Tensor,
    norms: Vec<f64>,
}

/// Result of a forward pass. Passes produced by [`Model::forward`] carry the trace needed by
/// [`Model::backward`]; passes from [`Model::infer`] do not.
pub struct Forward {
    pub features: Tensor,
    pub sphere: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
    trace: Option<Trace>,
}

impl Forward {
    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter_rows().map(super::tensor::argmax).collect()
    }
}

/// Gradient of the loss with respect to one of the network outputs.
pub enum OutputGrad {
    Logits(Tensor),
    Probs(Tensor),
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut extractor = Vec::with_capacity(config.extractor_layers);
        let mut width = config.in_dim;
        for i in 0..config.extractor_layers {
            let out = if i + 1 == config.extractor_layers { config.feature_dim } else { config.hidden_dim };
            extractor.push(Affine::init(width, out, &mut rng));
            width = out;
        }
        let projector = vec![
            Affine::init(config.feature_dim, config.projector_hidden, &mut rng),
            Affine::init(config.projector_hidden, config.sphere_dim, &mut rng),
        ];
        let classifier = Affine::init(config.sphere_dim, config.classes, &mut rng);
        Ok(Self { config, extractor, projector, classifier })
    }

    pub fn layers(&self) -> impl Iterator<Item = &Affine> {
        self.extractor.iter().chain(&self.projector).chain(std::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Affine> {
        self.extractor
            .iter_mut()
            .chain(self.projector.iter_mut())
            .chain(std::iter::once(&mut self.classifier))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Forward pass that records activations for a later [`Model::backward`].
    pub fn forward(&self, batch: &Tensor) -> Result<Forward> {
        self.run(batch, true)
    }

    /// Forward pass without recording, for evaluation and pseudo-labeling.
    pub fn infer(&self, batch: &Tensor) -> Result<Forward> {
        self.run(batch, false)
    }

    /// Output of `f` only.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut a = batch.clone();
        for layer in &self.extractor {
            a = layer.apply(&a);
            relu_in_place(&mut a);
        }
        Ok(a)
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.config.in_dim {
            return Err(Error::Shape(format!(
                "model expects n×{} input, got {:?}",
                self.config.in_dim,
                batch.shape()
            )));
        }
        batch.ensure_finite("model input")
    }

    fn run(&self, batch: &Tensor, record: bool) -> Result<Forward> {
        self.check_input(batch)?;
        let mut inputs = Vec::new();
        let mut pre_relu = Vec::new();

        let mut a = batch.clone();
        for layer in &self.extractor {
            let z = layer.apply(&a);
            let mut h = z.clone();
            relu_in_place(&mut h);
            if record {
                inputs.push(a);
                pre_relu.push(z);
            }
            a = h;
        }
        let features = a;

        let z = self.projector[0].apply(&features);
        let mut h = z.clone();
        relu_in_place(&mut h);
        let unnormalized = self.projector[1].apply(&h);
        if record {
            inputs.push(features.clone());
            pre_relu.push(z);
            inputs.push(h);
        }

        let mut sphere = unnormalized.clone();
        let mut norms = Vec::with_capacity(sphere.rows());
        for i in 0..sphere.rows() {
            let row = sphere.row_mut(i);
            let norm = dot(row, row).sqrt();
            let denom = norm + SPHERE_EPS;
            row.iter_mut().for_each(|v| *v /= denom);
            norms.push(norm);
        }

        let logits = self.classifier.apply(&sphere);
        let probs = softmax(&logits);
        if record {
            inputs.push(sphere.clone());
        }
        for (t, name) in [(&features, "features"), (&sphere, "sphere"), (&logits, "logits")] {
            t.ensure_finite(name)?;
        }

        let trace = record.then_some(Trace { inputs, pre_relu, unnormalized, norms });
        Ok(Forward { features, sphere, logits, probs, trace })
    }

    pub fn zero_gradients(&self) -> Gradients {
        let zero = |l: &Affine| Affine::zeros(l.input_dim(), l.output_dim());
        Gradients {
            extractor: self.extractor.iter().map(zero).collect(),
            projector: self.projector.iter().map(zero).collect(),
            classifier: zero(&self.classifier),
        }
    }

    /// Backpropagates `grad` through the recorded pass.
    pub fn backward(&self, pass: &Forward, grad: &OutputGrad) -> Result<Gradients> {
        let trace = pass
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let dlogits = match grad {
            OutputGrad::Logits(g) => {
                check_same_shape(g, &pass.logits)?;
                g.clone()
            }
            OutputGrad::Probs(g) => {
                check_same_shape(g, &pass.probs)?;
                softmax_backward(&pass.probs, g)
            }
        };
        dlogits.ensure_finite("output gradient")?;

        let mut grads = self.zero_gradients();
        let n_ext = self.extractor.len();

        let sphere_in = &trace.inputs[n_ext + 2];
        let dsphere = self.classifier.backward(sphere_in, &dlogits, &mut grads.classifier);
        let du = normalize_backward(&trace.unnormalized, &trace.norms, &dsphere);

        let dh = self.projector[1].backward(&trace.inputs[n_ext + 1], &du, &mut grads.projector[1]);
        let dz = relu_backward(&trace.pre_relu[n_ext], dh);
        let mut da = self.projector[0].backward(&trace.inputs[n_ext], &dz, &mut grads.projector[0]);

        for i in (0..n_ext).rev() {
            let dz = relu_backward(&trace.pre_relu[i], da);
            da = self.extractor[i].backward(&trace.inputs[i], &dz, &mut grads.extractor[i]);
        }
        Ok(grads)
    }
}

impl Gradients {
    pub fn layers(&self) -> impl Iterator<Item = &Affine> {
        self.extractor.iter().chain(&self.projector).chain(std::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Affine> {
        self.extractor
            .iter_mut()
            .chain(self.projector.iter_mut())
            .chain(std::iter::once(&mut self.classifier))
    }

    pub fn scale(&mut self, c: f64) {
        for l in self.layers_mut() {
            l.weight.scale(c);
            l.bias.iter_mut().for_each(|b| *b *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weight.data().iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers()
            .flat_map(|l| l.weight.data().iter().chain(&l.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("gradient shape {:?} != output shape {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_backward(pre: &Tensor, mut grad: Tensor) -> Tensor {
    for (g, &z) in grad.data_mut().iter_mut().zip(pre.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Gradient of `s = u / (‖u‖ + eps)` with respect to `u`, row by row.
fn normalize_backward(u: &Tensor, norms: &[f64], ds: &Tensor) -> Tensor {
    let mut du = Tensor::zeros(u.shape().to_vec());
    for (i, &r) in norms.iter().enumerate() {
        let denom = r + SPHERE_EPS;
        let ur = u.row(i);
        let dsr = ds.row(i);
        let out = du.row_mut(i);
        if r == 0.0 {
            for (o, g) in out.iter_mut().zip(dsr) {
                *o = g / denom;
            }
            continue;
        }
        let proj = dot(ur, dsr) / (r * denom * denom);
        for ((o, g), x) in out.iter_mut().zip(dsr).zip(ur) {
            *o = g / denom - x * proj;
        }
    }
    du
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(probs.shape().to_vec());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let g = dprobs.row(i);
        let inner = dot(p, g);
        for ((o, pj), gj) in out.row_mut(i).iter_mut().zip(p).zip(g) {
            *o = pj * (gj - inner);
        }
    }
    out
}

/// `log softmax(logits)[label]`, clamped at [`LOG_PROB_FLOOR`].
pub fn log_prob(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (logits[label] - lse).max(LOG_PROB_FLOOR)
}

/// Per-row cross entropy of a forward pass.
pub fn cross_entropy(pass: &Forward, labels: &[usize]) -> Vec<f64> {
    pass.logits.iter_rows().zip(labels).map(|(row, &y)| -log_prob(row, y)).collect()
}

/// Gradient of `Σ_i coef_i · CE_i` with respect to the logits.
///
/// Rows whose log-probability sits on the floor contribute nothing, matching the clamp.
pub fn weighted_ce_logit_grad(pass: &Forward, labels: &[usize], coef: &[f64]) -> Tensor {
    let mut g = Tensor::zeros(pass.logits.shape().to_vec());
    for i in 0..labels.len() {
        let c = coef[i];
        if c == 0.0 || log_prob(pass.logits.row(i), labels[i]) <= LOG_PROB_FLOOR {
            continue;
        }
        let p = pass.probs.row(i);
        let row = g.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = c * (p[j] - if j == labels[i] { 1.0 } else { 0.0 });
        }
    }
    g
}
