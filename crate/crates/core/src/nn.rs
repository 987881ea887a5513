//! Dense feed-forward networks with reverse-mode gradients and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected input of length {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("expected upstream gradient of length {expected}, got {got}")]
    UpstreamDim { expected: usize, got: usize },
    #[error("layer {0} does not chain: takes {1} inputs but the previous layer emits {2}")]
    Chain(usize, usize, usize),
    #[error("networks or gradients have different shapes")]
    ShapeMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("soft update factor {0} is outside [0, 1]")]
    BadFactor(f64),
    #[error("need at least one layer and one activation per layer")]
    EmptyNetwork,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 { 1.0 } else { 0.0 }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut s = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                s += w * v;
            }
            z.push(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-parameter partial derivatives, shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|x| *x *= k);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|x| x.is_finite())
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.weights.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| self.weights[i].len() == l.weights.len() && self.bias[i].len() == l.bias.len())
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[k+1]` the output of layer `k`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// Random network with uniform Glorot initialisation and zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self, NnError> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(NnError::EmptyNetwork);
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect(),
                    bias: vec![0.0; outputs],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::ShapeMismatch);
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(NnError::Chain(i, l.inputs, layers[i - 1].outputs));
            }
            if !l.weights.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(NnError::NonFinite("parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::InputDim { expected: self.input_dim(), got: x.len() });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut z = Vec::with_capacity(l.outputs);
            l.affine(acts.last().unwrap(), &mut z);
            let a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        Ok(Trace { acts, pre })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.trace(x)?.acts.pop().unwrap())
    }

    /// Gradient of `output · upstream` with respect to parameters and input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradient, Vec<f64>), NnError> {
        let trace = self.trace(x)?;
        let mut grad = Gradient::zeros_like(self);
        let dx = self.backward_into(&trace, upstream, Some(&mut grad))?;
        Ok((grad, dx))
    }

    /// Accumulates `∂(output·upstream)/∂θ` into `grad` (when given) and returns
    /// the input gradient.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], mut grad: Option<&mut Gradient>) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::UpstreamDim { expected: self.output_dim(), got: upstream.len() });
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[k];
            let a = &trace.acts[k + 1];
            for o in 0..l.outputs {
                delta[o] *= l.activation.derivative(z[o], a[o]);
            }
            if let Some(grad) = grad.as_deref_mut() {
                let input = &trace.acts[k];
                let gw = &mut grad.weights[k];
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d != 0.0 {
                        for (g, v) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(input) {
                            *g += d * v;
                        }
                    }
                    grad.bias[k][o] += d;
                }
            }
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let d = delta[o];
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(&l.weights[o * l.inputs..(o + 1) * l.inputs]) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<(), NnError> {
        if p.len() != self.param_count() {
            return Err(NnError::ShapeMismatch);
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// `self ← varsigma · main + (1 - varsigma) · self`.
    pub fn soft_update(&mut self, main: &Mlp, varsigma: f64) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&varsigma) {
            return Err(NnError::BadFactor(varsigma));
        }
        if !self.same_shape(main) {
            return Err(NnError::ShapeMismatch);
        }
        for (t, m) in self.layers.iter_mut().zip(&main.layers) {
            for (a, b) in t.weights.iter_mut().zip(&m.weights).chain(t.bias.iter_mut().zip(&m.bias)) {
                *a = varsigma * b + (1.0 - varsigma) * *a;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            params: self.flat_params(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, NnError> {
        if c.dims.len() < 2 || c.activations.len() + 1 != c.dims.len() {
            return Err(NnError::Checkpoint("dimension and activation lists disagree".into()));
        }
        let layers = c
            .dims
            .windows(2)
            .zip(&c.activations)
            .map(|(w, &activation)| Layer { inputs: w[0], outputs: w[1], weights: vec![0.0; w[0] * w[1]], bias: vec![0.0; w[1]], activation })
            .collect();
        let mut net = Mlp { layers };
        net.set_flat_params(&c.params).map_err(|_| NnError::Checkpoint(format!("expected {} parameters, found {}", net.param_count(), c.params.len())))?;
        Mlp::from_layers(net.layers)
    }
}

/// Serialised network: layer widths, activation names and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Adam optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.param_count();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradient) -> Result<(), NnError> {
        if !grad.congruent(net) || self.m.len() != net.param_count() {
            return Err(NnError::ShapeMismatch);
        }
        if !grad.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        for (li, l) in net.layers.iter_mut().enumerate() {
            let params = l.weights.iter_mut().zip(&grad.weights[li]).chain(l.bias.iter_mut().zip(&grad.bias[li]));
            for (p, &g) in params {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}
