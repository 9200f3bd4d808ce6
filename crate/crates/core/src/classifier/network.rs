//! Dense feed-forward network: ReLU hidden layers, linear output logits,
//! softmax cross-entropy or masked per-node sigmoid cross-entropy on top.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * self.inputs..(j + 1) * self.inputs];
            *o = self.biases[j] + row.iter().zip(x).map(|(w, a)| w * a).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Training target of one sample.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class index for the softmax head.
    Class(usize),
    /// Per-node targets and 0/1 loss mask for the sigmoid head.
    Nodes { target: &'a [f64], mask: &'a [f64] },
}

/// Per-layer activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (post-ReLU and dropout for hidden layers, raw logits for the last).
    acts: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit: 0 or `1 / (1 - p)`, all 1 without dropout.
    scale: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Output of the last hidden layer.
    pub fn embedding(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zero(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    /// Gradient of parameter `i` in [`Network::param`] order.
    pub fn flat(&self, mut i: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if i < w.len() {
                return w[i];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

impl Network {
    /// `sizes` lists input, hidden and output widths. Hidden layers use He
    /// uniform initialization, the output layer Glorot uniform; biases start
    /// at zero.
    pub fn new(sizes: &[usize], rng: &mut seed::Rng) -> Self {
        let mut net = Network::zeros(sizes);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let bound = if l == last {
                libm::sqrt(6.0 / (layer.inputs + layer.outputs) as f64)
            } else {
                libm::sqrt(6.0 / layer.inputs as f64)
            };
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output widths");
        Network {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn embedding_dim(&self) -> usize {
        if self.layers.len() >= 2 {
            self.layers[self.layers.len() - 2].outputs
        } else {
            self.input_dim()
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Mutable access to parameter `i`: each layer's weights, then its biases.
    pub fn param(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return &mut l.biases[i];
            }
            i -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn trace(&self) -> Trace {
        let mut acts = vec![vec![0.0; self.input_dim()]];
        let mut scale = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            acts.push(vec![0.0; layer.outputs]);
            if l + 1 < self.layers.len() {
                scale.push(vec![1.0; layer.outputs]);
            }
        }
        Trace { acts, scale }
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Forward pass into `trace`. With `dropout = Some((p, rng))` hidden units
    /// are zeroed with probability `p` and survivors scaled by `1 / (1 - p)`.
    pub fn forward(
        &self,
        x: &[f32],
        trace: &mut Trace,
        mut dropout: Option<(f64, &mut seed::Rng)>,
    ) {
        for (a, &v) in trace.acts[0].iter_mut().zip(x) {
            *a = f64::from(v);
        }
        let hidden = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.affine(&prev[l], out);
            if l < hidden {
                let scale = &mut trace.scale[l];
                match dropout.as_mut() {
                    Some((p, rng)) if *p > 0.0 => {
                        let keep = 1.0 / (1.0 - *p);
                        for s in scale.iter_mut() {
                            *s = if rng.random::<f64>() < *p { 0.0 } else { keep };
                        }
                    }
                    _ => scale.iter_mut().for_each(|s| *s = 1.0),
                }
                for (o, &s) in out.iter_mut().zip(scale.iter()) {
                    *o = if *o > 0.0 { *o * s } else { 0.0 };
                }
            }
        }
    }

    /// Loss of the traced sample.
    pub fn loss(trace: &Trace, target: Target<'_>) -> f64 {
        Self::output_delta(trace, target, &mut Vec::new())
    }

    /// Loss of the traced sample and its gradient w.r.t. the logits.
    fn output_delta(trace: &Trace, target: Target<'_>, delta: &mut Vec<f64>) -> f64 {
        let logits = trace.logits();
        delta.clear();
        match target {
            Target::Class(y) => {
                let p = softmax(logits);
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + libm::log(logits.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
                delta.extend(p.iter().enumerate().map(|(i, &pi)| {
                    if i == y {
                        pi - 1.0
                    } else {
                        pi
                    }
                }));
                lse - logits[y]
            }
            Target::Nodes { target, mask } => {
                let mut loss = 0.0;
                for ((&z, &t), &m) in logits.iter().zip(target).zip(mask) {
                    loss += m * (softplus(z) - t * z);
                    delta.push(m * (sigmoid(z) - t));
                }
                loss
            }
        }
    }

    /// Adds `weight * d(loss)/d(params)` for the traced sample into `grads`.
    /// Returns the unweighted loss.
    pub fn backward(
        &self,
        trace: &Trace,
        target: Target<'_>,
        weight: f64,
        grads: &mut Gradients,
    ) -> f64 {
        let mut delta = Vec::with_capacity(self.output_dim());
        let loss = Self::output_delta(trace, target, &mut delta);
        delta.iter_mut().for_each(|d| *d *= weight);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.acts[l];
            let gw = &mut grads.weights[l];
            for (j, &dj) in delta.iter().enumerate() {
                if dj != 0.0 {
                    let row = &mut gw[j * layer.inputs..(j + 1) * layer.inputs];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += dj * a;
                    }
                }
                grads.biases[l][j] += dj;
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (j, &dj) in delta.iter().enumerate() {
                if dj != 0.0 {
                    let row = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += dj * w;
                    }
                }
            }
            // ReLU and dropout: d act / d pre-act is the dropout scale where
            // the unit fired and 0 elsewhere.
            for ((p, &a), &s) in prev.iter_mut().zip(input).zip(&trace.scale[l - 1]) {
                *p = if a > 0.0 { *p * s } else { 0.0 };
            }
            delta = prev;
        }
        loss
    }

    /// Mean loss and gradients over a batch, without dropout.
    pub fn batch_gradients(&self, xs: &[&[f32]], targets: &[Target<'_>]) -> (f64, Gradients) {
        let mut grads = self.gradients();
        let mut trace = self.trace();
        let w = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for (x, &t) in xs.iter().zip(targets) {
            self.forward(x, &mut trace, None);
            loss += w * self.backward(&trace, t, w, &mut grads);
        }
        (loss, grads)
    }

    /// Mean loss over a batch, without dropout.
    pub fn batch_loss(&self, xs: &[&[f32]], targets: &[Target<'_>]) -> f64 {
        let mut trace = self.trace();
        let mut delta = Vec::new();
        let mut loss = 0.0;
        for (x, &t) in xs.iter().zip(targets) {
            self.forward(x, &mut trace, None);
            loss += Self::output_delta(&trace, t, &mut delta);
        }
        loss / xs.len() as f64
    }

    /// Plain SGD step: `params -= lr * grads`, then clears `grads`.
    pub fn step(&mut self, grads: &mut Gradients, lr: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *w -= lr * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
                *b -= lr * g;
            }
        }
        grads.zero();
    }
}
