//! One-hidden-layer rectifier network with a softmax head and hand-derived
//! gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::Rng;
use crate::error::{Error, Result};
use crate::table::LabeledExample;

/// Weights are row-major: `hidden_weights[j * input_dim + i]` connects
/// input `i` to hidden unit `j`; `head_weights[k * hidden + j]` connects
/// hidden unit `j` to class `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            hidden_weights: vec![0.0; hidden * input_dim],
            hidden_bias: vec![0.0; hidden],
            head_weights: vec![0.0; classes * hidden],
            head_bias: vec![0.0; classes],
        }
    }

    /// Uniform fan-in initialization `U(-s / sqrt(fan_in), s / sqrt(fan_in))`
    /// for both weight matrices; biases start at zero.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden, classes);
        let a = scale / (input_dim as f64).sqrt();
        for w in p.hidden_weights.iter_mut() {
            *w = rng.random_range(-a..=a);
        }
        let a = scale / (hidden as f64).sqrt();
        for w in p.head_weights.iter_mut() {
            *w = rng.random_range(-a..=a);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameter blocks in a fixed order: hidden weights, hidden bias,
    /// head weights, head bias.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            &self.hidden_weights,
            &self.hidden_bias,
            &self.head_weights,
            &self.head_bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.head_weights,
            &mut self.head_bias,
        ]
    }

    /// Post-activation hidden vector.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let row = &self.hidden_weights[j * self.input_dim..(j + 1) * self.input_dim];
            let z = self.hidden_bias[j] + dot(row, x);
            h.push(z.max(0.0));
        }
        h
    }

    /// Head logits for an embedding.
    pub fn head(&self, embedding: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.head_weights[k * self.hidden..(k + 1) * self.hidden];
                self.head_bias[k] + dot(row, embedding)
            })
            .collect()
    }

    /// Predicted class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.head(&self.embed(x)))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `-log softmax(logits)[label]`, computed stably.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Forward {
    let embedding = params.embed(x);
    let logits = params.head(&embedding);
    let probabilities = softmax(&logits);
    Forward {
        embedding,
        logits,
        probabilities,
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl Gradients {
    fn zeros_like(p: &ModelParams) -> Self {
        Self {
            hidden_weights: vec![0.0; p.hidden_weights.len()],
            hidden_bias: vec![0.0; p.hidden_bias.len()],
            head_weights: vec![0.0; p.head_weights.len()],
            head_bias: vec![0.0; p.head_bias.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [
            &self.hidden_weights,
            &self.hidden_bias,
            &self.head_weights,
            &self.head_bias,
        ]
    }
}

/// Objective `sum_i w_i CE_i + (weight_decay / 2) (|W_hidden|^2 + |W_head|^2)`.
/// Biases are not decayed. Weights are used as given; pass `1/n` each for a
/// plain mean.
pub fn objective(params: &ModelParams, batch: &[&LabeledExample], weights: &[f64], weight_decay: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .zip(weights)
        .map(|(e, w)| w * cross_entropy(&forward(params, &e.features).logits, e.class_y))
        .sum();
    data + 0.5 * weight_decay * (sq_norm(&params.hidden_weights) + sq_norm(&params.head_weights))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Weighted cross-entropy (without the decay term) and the gradient of
/// [`objective`].
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&LabeledExample],
    weights: &[f64],
    weight_decay: f64,
) -> (f64, Gradients) {
    let (d, h, c) = (params.input_dim, params.hidden, params.classes);
    let mut g = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let mut pre = vec![0.0; h];
    let mut delta_hidden = vec![0.0; h];
    for (e, &w) in batch.iter().zip(weights) {
        let x = &e.features;
        for j in 0..h {
            pre[j] = params.hidden_bias[j] + dot(&params.hidden_weights[j * d..(j + 1) * d], x);
        }
        let act: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        let logits = params.head(&act);
        loss += w * cross_entropy(&logits, e.class_y);
        let probs = softmax(&logits);

        delta_hidden.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..c {
            let dz = w * (probs[k] - if k == e.class_y { 1.0 } else { 0.0 });
            g.head_bias[k] += dz;
            let row = &mut g.head_weights[k * h..(k + 1) * h];
            for j in 0..h {
                row[j] += dz * act[j];
                delta_hidden[j] += dz * params.head_weights[k * h + j];
            }
        }
        for j in 0..h {
            if pre[j] <= 0.0 {
                continue;
            }
            let dj = delta_hidden[j];
            g.hidden_bias[j] += dj;
            let row = &mut g.hidden_weights[j * d..(j + 1) * d];
            for i in 0..d {
                row[i] += dj * x[i];
            }
        }
    }
    for (gw, w) in g.hidden_weights.iter_mut().zip(&params.hidden_weights) {
        *gw += weight_decay * w;
    }
    for (gw, w) in g.head_weights.iter_mut().zip(&params.head_weights) {
        *gw += weight_decay * w;
    }
    (loss, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Leave the hidden layer untouched.
    pub freeze_features: bool,
}

/// One SGD step on the weighted cross-entropy. Returns the batch loss
/// before the update.
pub fn grad_step(
    params: &mut ModelParams,
    batch: &[&LabeledExample],
    weights: &[f64],
    step: &StepConfig,
) -> Result<f64> {
    if weights.len() != batch.len() {
        return Err(Error::InvalidConfig(format!(
            "{} weights for {} examples",
            weights.len(),
            batch.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidConfig("example weights must be finite and non-negative".into()));
    }
    let (loss, g) = loss_and_gradients(params, batch, weights, step.weight_decay);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            epoch: 0,
            step: 0,
        });
    }
    let lr = step.learning_rate;
    let apply = |p: &mut [f64], g: &[f64]| {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    };
    if !step.freeze_features {
        apply(&mut params.hidden_weights, &g.hidden_weights);
        apply(&mut params.hidden_bias, &g.hidden_bias);
    }
    apply(&mut params.head_weights, &g.head_weights);
    apply(&mut params.head_bias, &g.head_bias);
    if !params.is_finite() {
        return Err(Error::NonFinite {
            what: "parameters",
            epoch: 0,
            step: 0,
        });
    }
    Ok(loss)
}
