//! Fully connected softmax classifiers (multinomial logistic regression when
//! there are no hidden layers) with ReLU hidden units, trained by plain SGD on
//! the mean cross-entropy.

mod checkpoint;
mod linalg;

pub use checkpoint::{checkpoint_string, parse_checkpoint, read_checkpoint, write_checkpoint};

use rand::Rng as _;

use crate::rng::rng_from;
use crate::{Error, Result};
use linalg::{gemm, Strides};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// `[F, h1, ..., L]`.
    pub layer_sizes: Vec<usize>,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(layer_sizes: Vec<usize>, init_seed: u64) -> Result<Self> {
        let cfg = Self { layer_sizes, init_seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "layer sizes {:?}: need at least input and output, all positive",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_labels(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn with_seed(&self, init_seed: u64) -> Self {
        Self {
            layer_sizes: self.layer_sizes.clone(),
            init_seed,
        }
    }
}

/// One affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Weights and biases of every layer. Gradients and model updates share the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

pub type Gradient = ModelParams;

impl ModelParams {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        sizes.extend(self.layers.last().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_labels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter shapes {:?} and {:?} differ",
                self.layer_sizes(),
                other.layer_sizes()
            )))
        }
    }

    /// All entries, layer by layer: weights then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (x, y) in self.values_mut().zip(other.values()) {
            *x += a * y;
        }
        Ok(())
    }

    /// `self - other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values_mut().for_each(|v| *v *= a);
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Glorot-uniform weights in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(&config.layer_sizes);
    let mut rng = rng_from(config.init_seed);
    for layer in &mut params.layers {
        let s = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-s..=s);
        }
    }
    Ok(params)
}

/// Pre-activations of every layer for a row-major batch `xs` of `rows` inputs.
/// Hidden entries are post-ReLU; the last entry holds the logits.
fn forward_batch(params: &ModelParams, xs: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let input: &[f64] = if i == 0 { xs } else { &acts[i - 1] };
        let mut z = Vec::with_capacity(rows * layer.outputs);
        for _ in 0..rows {
            z.extend_from_slice(&layer.bias);
        }
        gemm(
            (rows, layer.inputs, layer.outputs),
            input,
            Strides::row_major(layer.inputs),
            &layer.weights,
            Strides::transposed(layer.inputs),
            1.0,
            &mut z,
        );
        if i + 1 < params.layers.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Logits for one input.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(forward_batch(params, x, 1).pop().unwrap_or_default())
}

/// Logits for many inputs, one vector per row.
pub fn forward_many(params: &ModelParams, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let f = params.input_dim();
    if let Some(bad) = xs.iter().find(|x| x.len() != f) {
        return Err(Error::shape(format!(
            "input has {} features, model expects {f}",
            bad.len()
        )));
    }
    let flat: Vec<f64> = xs.iter().flat_map(|x| x.iter().copied()).collect();
    let logits = forward_batch(params, &flat, xs.len()).pop().unwrap_or_default();
    Ok(logits.chunks(params.num_labels()).map(<[f64]>::to_vec).collect())
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    Ok(argmax_first(&forward(params, x)?))
}

/// Predictions for many inputs, evaluated in chunks.
pub fn predict_many(params: &ModelParams, xs: &[&[f64]]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(256) {
        out.extend(forward_many(params, chunk)?.iter().map(|l| argmax_first(l)));
    }
    Ok(out)
}

/// Softmax of `logits`, shifted by the max for stability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy over `batch` and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[(&[f64], usize)]) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let f = params.input_dim();
    let labels = params.num_labels();
    let rows = batch.len();
    let mut xs = Vec::with_capacity(rows * f);
    for (x, y) in batch {
        if x.len() != f {
            return Err(Error::shape(format!(
                "input has {} features, model expects {f}",
                x.len()
            )));
        }
        if *y >= labels {
            return Err(Error::shape(format!("label {y} outside [0, {labels})")));
        }
        xs.extend_from_slice(x);
    }
    let acts = forward_batch(params, &xs, rows);

    // dL/dz for the output layer: (softmax - onehot) / rows
    let logits = acts.last().unwrap();
    let mut delta = Vec::with_capacity(rows * labels);
    let mut loss = 0.0;
    for (r, (_, y)) in batch.iter().enumerate() {
        let z = &logits[r * labels..(r + 1) * labels];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        loss += max + sum.ln() - z[*y];
        for (j, v) in z.iter().enumerate() {
            let p = (v - max).exp() / sum;
            let target = if j == *y { 1.0 } else { 0.0 };
            delta.push((p - target) / rows as f64);
        }
    }
    loss /= rows as f64;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {loss}")));
    }

    let mut grad = params.zeros_like();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input: &[f64] = if i == 0 { &xs } else { &acts[i - 1] };
        let g = &mut grad.layers[i];
        gemm(
            (layer.outputs, rows, layer.inputs),
            &delta,
            Strides::transposed(layer.outputs),
            input,
            Strides::row_major(layer.inputs),
            0.0,
            &mut g.weights,
        );
        for row in delta.chunks(layer.outputs) {
            for (b, d) in g.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        if i > 0 {
            let mut back = vec![0.0; rows * layer.inputs];
            gemm(
                (rows, layer.outputs, layer.inputs),
                &delta,
                Strides::row_major(layer.outputs),
                &layer.weights,
                Strides::row_major(layer.inputs),
                0.0,
                &mut back,
            );
            // ReLU mask: activations stored post-ReLU, so a > 0 iff z > 0
            for (b, a) in back.iter_mut().zip(&acts[i - 1]) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    if !grad.is_finite() {
        return Err(Error::numeric("non-finite gradient"));
    }
    Ok((loss, grad))
}

/// `params - eta * grad`.
pub fn sgd_step(params: &ModelParams, grad: &Gradient, eta: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    out.add_scaled(-eta, grad)?;
    Ok(out)
}

/// Fraction of `data` predicted correctly.
pub fn accuracy(params: &ModelParams, data: &crate::datasets::Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let xs: Vec<&[f64]> = data.examples().iter().map(|e| e.features.as_slice()).collect();
    let preds = predict_many(params, &xs)?;
    let correct = preds
        .iter()
        .zip(data.examples())
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests;
