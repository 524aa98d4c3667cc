//! Minimal dense-network substrate: layers, activations, Adam/SGD, and
//! finite-difference gradient verification.
//!
//! Everything is 64-bit and deterministic given seed and input order. The
//! networks here are small enough that exact gradient checks stay cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache does not match this network")]
    StaleCache,
    #[error("gradient shape does not match parameters")]
    ShapeMismatch,
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// Normalized exponential; only valid on the terminal layer.
    Softmax,
}

/// Fully connected layer. Weights are output-major: `weights[o * in + i]`,
/// so both the forward dot product and the weight-gradient rows stay
/// contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    fn uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        // Fan-in scaling keeps tanh units in their responsive range.
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

fn apply_activation(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Identity => {}
        Activation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
        Activation::Relu => {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Softmax => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in z.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// A sequential dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<(DenseLayer, Activation)>,
}

impl Network {
    /// Seeded fan-in uniform init: `dims` has one more entry than
    /// `activations`.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self, NnError> {
        Self::validate_arch(dims, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| (DenseLayer::uniform(w[0], w[1], &mut rng), act))
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters; with tanh or softmax heads this yields exactly
    /// symmetric outputs.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self, NnError> {
        Self::validate_arch(dims, activations)?;
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| (DenseLayer::zeros(w[0], w[1]), act))
            .collect();
        Ok(Self { layers })
    }

    fn validate_arch(dims: &[usize], activations: &[Activation]) -> Result<(), NnError> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(NnError::BadArchitecture(format!(
                "{} dims with {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(NnError::BadArchitecture("zero layer dimension".into()));
        }
        for (i, &act) in activations.iter().enumerate() {
            if act == Activation::Softmax && i != activations.len() - 1 {
                return Err(NnError::BadArchitecture(
                    "softmax is only valid on the terminal layer".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().0.out_dim
    }

    pub fn layers(&self) -> &[(DenseLayer, Activation)] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|(l, _)| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flat parameter access: weights then biases, layer by layer.
    pub fn param(&self, idx: usize) -> f64 {
        let (layer, off) = self.locate(idx);
        let l = &self.layers[layer].0;
        if off < l.weights.len() {
            l.weights[off]
        } else {
            l.biases[off - l.weights.len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (layer, off) = self.locate(idx);
        let l = &mut self.layers[layer].0;
        if off < l.weights.len() {
            l.weights[off] = v;
        } else {
            l.biases[off - l.weights.len()] = v;
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (i, (l, _)) in self.layers.iter().enumerate() {
            let span = l.weights.len() + l.biases.len();
            if idx < span {
                return (i, idx);
            }
            idx -= span;
        }
        panic!("parameter index out of range");
    }

    /// Deterministic forward pass; the cache holds everything backward
    /// needs.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if input.len() != self.in_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for (layer, act) in &self.layers {
            let mut z = layer.biases.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (w, xi) in row.iter().zip(&x) {
                    acc += w * xi;
                }
                *zo += acc;
            }
            apply_activation(*act, &mut z);
            cache.inputs.push(x);
            cache.outputs.push(z.clone());
            x = z;
        }
        Ok((x, cache))
    }

    /// Forward without keeping the cache; for action selection and
    /// evaluation.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Exact gradients of the composed function. Returns parameter
    /// gradients plus the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NnError> {
        if cache.inputs.len() != self.layers.len() || cache.outputs.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        for ((layer, _), (inp, out)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.outputs))
        {
            if inp.len() != layer.in_dim || out.len() != layer.out_dim {
                return Err(NnError::StaleCache);
            }
        }
        if out_grad.len() != self.out_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.out_dim(),
                got: out_grad.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = out_grad.to_vec();
        for (li, (layer, act)) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[li];
            // d loss / d pre-activation
            let mut dz = g;
            match act {
                Activation::Identity => {}
                Activation::Tanh => {
                    for (d, a) in dz.iter_mut().zip(out) {
                        *d *= 1.0 - a * a;
                    }
                }
                Activation::Relu => {
                    for (d, a) in dz.iter_mut().zip(out) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Softmax => {
                    let dot: f64 = dz.iter().zip(out).map(|(d, y)| d * y).sum();
                    for (d, y) in dz.iter_mut().zip(out) {
                        *d = y * (*d - dot);
                    }
                }
            }
            let input = &cache.inputs[li];
            let lg = &mut grads.layers[li];
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &dzo) in dz.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += dzo * input[i];
                    dx[i] += dzo * row[i];
                }
                lg.biases[o] += dzo;
            }
            g = dx;
        }
        Ok((grads, g))
    }
}

/// Intermediates from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|(l, _)| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in &mut l.weights {
                *x *= factor;
            }
            for x in &mut l.biases {
                *x *= factor;
            }
        }
    }

    fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, (l, _))| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First/second moment state plus hyperparameters for one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adam(net: &Network, learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Self::moment_shape(net),
            v: Self::moment_shape(net),
        }
    }

    pub fn sgd(net: &Network, learning_rate: f64) -> Self {
        let _ = net;
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn moment_shape(net: &Network) -> Vec<Vec<f64>> {
        net.layers
            .iter()
            .flat_map(|(l, _)| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
            .collect()
    }
}

/// Apply one optimizer step in place. Adam by default in the agents; SGD is
/// selectable.
pub fn optimize_step(
    state: &mut OptimizerState,
    net: &mut Network,
    grads: &Gradients,
) -> Result<(), NnError> {
    if !grads.matches(net) {
        return Err(NnError::ShapeMismatch);
    }
    state.step_count += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (li, (layer, _)) in net.layers.iter_mut().enumerate() {
                let g = &grads.layers[li];
                for (p, d) in layer.weights.iter_mut().zip(&g.weights) {
                    *p -= state.learning_rate * d;
                }
                for (p, d) in layer.biases.iter_mut().zip(&g.biases) {
                    *p -= state.learning_rate * d;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.m.len() != net.layers.len() * 2 {
                return Err(NnError::ShapeMismatch);
            }
            let t = state.step_count as i32;
            let bc1 = 1.0 - state.beta1.powi(t);
            let bc2 = 1.0 - state.beta2.powi(t);
            for (li, (layer, _)) in net.layers.iter_mut().enumerate() {
                let g = &grads.layers[li];
                let slots = [
                    (&mut layer.weights, &g.weights, 2 * li),
                    (&mut layer.biases, &g.biases, 2 * li + 1),
                ];
                for (params, grad, slot) in slots {
                    let m = &mut state.m[slot];
                    let v = &mut state.v[slot];
                    if m.len() != params.len() {
                        return Err(NnError::ShapeMismatch);
                    }
                    for i in 0..params.len() {
                        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
                        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        params[i] -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Scalar losses for gradient checking.
#[derive(Debug, Clone)]
pub enum LossFn {
    /// `sum((out - target)^2)`
    SquaredTo(Vec<f64>),
    /// `dot(out, g)`
    Dot(Vec<f64>),
}

impl LossFn {
    pub fn value(&self, out: &[f64]) -> f64 {
        match self {
            LossFn::SquaredTo(t) => out.iter().zip(t).map(|(o, t)| (o - t) * (o - t)).sum(),
            LossFn::Dot(g) => out.iter().zip(g).map(|(o, g)| o * g).sum(),
        }
    }

    pub fn out_grad(&self, out: &[f64]) -> Vec<f64> {
        match self {
            LossFn::SquaredTo(t) => out.iter().zip(t).map(|(o, t)| 2.0 * (o - t)).collect(),
            LossFn::Dot(g) => g.clone(),
        }
    }
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub checked: usize,
}

/// Compare analytic gradients against central finite differences
/// (`h = 1e-5`) over every parameter, or over a seeded sample of at least
/// 200 coordinates for large networks.
pub fn grad_check(net: &Network, input: &[f64], loss: &LossFn, seed: u64) -> GradCheckReport {
    const H: f64 = 1e-5;
    const SAMPLE_THRESHOLD: usize = 2048;
    const SAMPLE_SIZE: usize = 256;

    let (out, cache) = net.forward(input).expect("grad_check input shape");
    let (grads, _) = net
        .backward(&cache, &loss.out_grad(&out))
        .expect("fresh cache");
    // Flatten analytic gradients in param order.
    let mut analytic = Vec::with_capacity(net.param_count());
    for lg in &grads.layers {
        analytic.extend_from_slice(&lg.weights);
        analytic.extend_from_slice(&lg.biases);
    }

    let total = net.param_count();
    let coords: Vec<usize> = if total <= SAMPLE_THRESHOLD {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..SAMPLE_SIZE)
            .map(|_| rng.random_range(0..total))
            .collect()
    };

    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    let mut worst = 0;
    for &idx in &coords {
        let orig = probe.param(idx);
        probe.set_param(idx, orig + H);
        let plus = loss.value(&probe.infer(input).expect("shape"));
        probe.set_param(idx, orig - H);
        let minus = loss.value(&probe.infer(input).expect("shape"));
        probe.set_param(idx, orig);
        let numeric = (plus - minus) / (2.0 * H);
        let a = analytic[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = idx;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_coordinate: worst,
        checked: coords.len(),
    }
}

/// On-disk network + optimizer snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(network: Network, optimizer: Option<OptimizerState>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            network,
            optimizer,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, NnError> {
        let ck: Checkpoint =
            serde_json::from_str(json).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(NnError::BadCheckpoint(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization")
    }
}
