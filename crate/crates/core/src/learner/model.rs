use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Examples;
use crate::error::{NexusError, Result};

/// Multinomial logistic regression, flattened as `classes x dim` weights
/// followed by `classes` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub classes: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            values: vec![0.0; classes * dim + classes],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.values.len() {
            return Err(NexusError::DimensionMismatch {
                expected: self.values.len(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn check_examples(&self, data: &Examples) -> Result<()> {
        if data.dim != self.dim || data.classes != self.classes {
            return Err(NexusError::DimensionMismatch {
                expected: self.dim,
                actual: data.dim,
            });
        }
        Ok(())
    }

    pub fn plus(&self, delta: &[f64]) -> Result<ModelParams> {
        self.check_len(delta.len())?;
        Ok(ModelParams {
            classes: self.classes,
            dim: self.dim,
            values: self.values.iter().zip(delta).map(|(w, d)| w + d).collect(),
        })
    }

    pub fn minus(&self, other: &ModelParams) -> Result<Vec<f64>> {
        self.check_len(other.len())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let bias = &self.values[self.classes * self.dim..];
        for (c, slot) in out.iter_mut().enumerate() {
            let w = &self.values[c * self.dim..(c + 1) * self.dim];
            *slot = bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.classes];
        self.logits_into(x, &mut logits);
        argmax_lowest(&logits)
    }

    /// Writes `softmax(logits) - onehot(label)` into `err` and returns its squared norm.
    pub(crate) fn output_error(&self, x: &[f64], label: usize, err: &mut [f64]) -> f64 {
        self.logits_into(x, err);
        let max = err.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in err.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let mut norm2 = 0.0;
        for (c, v) in err.iter_mut().enumerate() {
            *v /= total;
            if c == label {
                *v -= 1.0;
            }
            norm2 += *v * *v;
        }
        norm2
    }

    /// Mean cross-entropy on `data`.
    pub fn loss(&self, data: &Examples) -> f64 {
        let mut logits = vec![0.0; self.classes];
        let mut total = 0.0;
        for i in 0..data.len() {
            self.logits_into(data.row(i), &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse - logits[data.labels[i]];
        }
        total / data.len().max(1) as f64
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `model` on `data`.
pub fn evaluate(model: &ModelParams, data: &Examples) -> Result<f64> {
    if data.is_empty() {
        return Err(NexusError::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    model.check_examples(data)?;
    let mut logits = vec![0.0; model.classes];
    let mut correct = 0usize;
    for i in 0..data.len() {
        model.logits_into(data.row(i), &mut logits);
        correct += usize::from(argmax_lowest(&logits) == data.labels[i]);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Plain minibatch SGD on pooled data; the non-federated reference learner.
pub fn train_central<R: Rng + ?Sized>(
    data: &Examples,
    epochs: usize,
    batch: usize,
    learning_rate: f64,
    rng: &mut R,
) -> ModelParams {
    let mut model = ModelParams::zeros(data.classes, data.dim);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut err = vec![0.0; data.classes];
    let mut grad = vec![0.0; model.len()];
    let bias_at = data.classes * data.dim;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let x = data.row(i);
                model.output_error(x, data.labels[i], &mut err);
                for (c, &e) in err.iter().enumerate() {
                    for (g, xv) in grad[c * data.dim..(c + 1) * data.dim].iter_mut().zip(x) {
                        *g += e * xv;
                    }
                    grad[bias_at + c] += e;
                }
            }
            let scale = learning_rate / chunk.len() as f64;
            for (w, g) in model.values.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
        }
    }
    model
}
