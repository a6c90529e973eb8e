//! One-hidden-layer perceptron (sigmoid hidden, softmax output) trained by
//! full-batch backpropagation with momentum on mean cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::FeatureMatrix;

pub const INIT_RANGE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("class {0} has no training examples")]
    MissingClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// A labeled input: feature vector and class index.
pub type Example = (Vec<f64>, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_classes: usize,
    /// Hidden weights, row-major `n_hidden x n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, row-major `n_classes x n_hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for AnnTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            hidden: 32,
            patience: 20,
            seed: 42,
        }
    }
}

impl AnnTrainConfig {
    pub fn validate(&self) -> Result<(), AnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AnnError::Invalid("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AnnError::Invalid("momentum must lie in [0, 1)".into()));
        }
        if self.hidden == 0 {
            return Err(AnnError::Invalid(
                "hidden layer must have at least one unit".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnHistory {
    /// Training loss before each update.
    pub train_loss: Vec<f64>,
    /// Held-out loss after each update (training loss when nothing is held out).
    pub heldout_loss: Vec<f64>,
    /// Number of updates applied to the returned parameters.
    pub best_epoch: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Splits `T` frames into `segments` contiguous runs (the first `T mod S`
/// runs one frame longer) and concatenates the run means. When `T < S`,
/// run `s` is the single frame `floor(s * T / S)`.
pub fn pool_utterance(features: &FeatureMatrix, segments: usize) -> Vec<f64> {
    pool_rows(features.rows(), segments)
}

pub fn pool_rows(rows: &[Vec<f64>], segments: usize) -> Vec<f64> {
    let t_len = rows.len();
    assert!(
        t_len >= 1 && segments >= 1,
        "pooling needs at least one frame and one segment"
    );
    let dim = rows[0].len();
    let mut out = Vec::with_capacity(segments * dim);
    if t_len < segments {
        for s in 0..segments {
            out.extend_from_slice(&rows[s * t_len / segments]);
        }
        return out;
    }
    let (base, extra) = (t_len / segments, t_len % segments);
    let mut start = 0;
    for s in 0..segments {
        let len = base + usize::from(s < extra);
        let mut mean = vec![0.0; dim];
        for row in &rows[start..start + len] {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        out.extend(mean.into_iter().map(|m| m / len as f64));
        start += len;
    }
    out
}

impl Mlp {
    /// Weights and biases drawn uniformly from `[-0.2, 0.2]`.
    pub fn new_seeded(n_inputs: usize, n_hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
                .collect::<Vec<f64>>()
        };
        Self {
            n_inputs,
            n_hidden,
            n_classes,
            w1: draw(n_hidden * n_inputs),
            b1: draw(n_hidden),
            w2: draw(n_classes * n_hidden),
            b2: draw(n_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), AnnError> {
        let shapes = [
            (self.w1.len(), self.n_hidden * self.n_inputs),
            (self.b1.len(), self.n_hidden),
            (self.w2.len(), self.n_classes * self.n_hidden),
            (self.b2.len(), self.n_classes),
        ];
        if self.n_inputs == 0 || self.n_hidden == 0 || self.n_classes == 0 {
            return Err(AnnError::Invalid("layer sizes must be positive".into()));
        }
        if shapes.iter().any(|(have, want)| have != want) {
            return Err(AnnError::Invalid(
                "parameter shapes disagree with layer sizes".into(),
            ));
        }
        if self.params().any(|p| !p.is_finite()) {
            return Err(AnnError::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }

    /// All parameters in a fixed order: w1, b1, w2, b2.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_hidden)
            .map(|h| {
                let row = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
                sigmoid(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h])
            })
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.w2[c * self.n_hidden..(c + 1) * self.n_hidden];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b2[c]
            })
            .collect()
    }

    /// Class posteriors for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, AnnError> {
        if x.len() != self.n_inputs {
            return Err(AnnError::DimMismatch {
                expected: self.n_inputs,
                got: x.len(),
            });
        }
        Ok(softmax(&self.logits(&self.hidden(x))))
    }

    fn check_batch(&self, batch: &[Example]) -> Result<(), AnnError> {
        if batch.is_empty() {
            return Err(AnnError::EmptyBatch);
        }
        for (x, y) in batch {
            if x.len() != self.n_inputs {
                return Err(AnnError::DimMismatch {
                    expected: self.n_inputs,
                    got: x.len(),
                });
            }
            if *y >= self.n_classes {
                return Err(AnnError::BadLabel {
                    label: *y,
                    classes: self.n_classes,
                });
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &[Example]) -> Result<f64, AnnError> {
        self.check_batch(batch)?;
        let total: f64 = batch
            .iter()
            .map(|(x, y)| {
                let z = self.logits(&self.hidden(x));
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[*y]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy and its gradient, returned in the network's own shape.
    pub fn loss_and_gradient(&self, batch: &[Example]) -> Result<(f64, Mlp), AnnError> {
        self.check_batch(batch)?;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for (x, y) in batch {
            let h = self.hidden(x);
            let p = softmax(&self.logits(&h));
            loss -= p[*y].max(f64::MIN_POSITIVE).ln();
            let mut dz2 = p;
            dz2[*y] -= 1.0;
            let mut dh = vec![0.0; self.n_hidden];
            for c in 0..self.n_classes {
                let d = dz2[c] * scale;
                grad.b2[c] += d;
                for k in 0..self.n_hidden {
                    grad.w2[c * self.n_hidden + k] += d * h[k];
                    dh[k] += self.w2[c * self.n_hidden + k] * d;
                }
            }
            for k in 0..self.n_hidden {
                let dz1 = dh[k] * h[k] * (1.0 - h[k]);
                grad.b1[k] += dz1;
                for (g, v) in grad.w1[k * self.n_inputs..(k + 1) * self.n_inputs]
                    .iter_mut()
                    .zip(x)
                {
                    *g += dz1 * v;
                }
            }
        }
        Ok((loss * scale, grad))
    }
}

/// One momentum update, `v <- mu * v - eta * g; w <- w + v`. Returns the
/// batch loss measured before the update.
pub fn backprop_step(
    mlp: &mut Mlp,
    batch: &[Example],
    config: &AnnTrainConfig,
    velocity: &mut Mlp,
) -> Result<f64, AnnError> {
    let (loss, grad) = mlp.loss_and_gradient(batch)?;
    for ((v, g), w) in velocity
        .params_mut()
        .zip(grad.params())
        .zip(mlp.params_mut())
    {
        *v = config.momentum * *v - config.learning_rate * g;
        *w += *v;
    }
    Ok(loss)
}

/// Full-batch training with a seeded 90/10 train/held-out split. Returns
/// the parameters with the lowest held-out loss.
pub fn train_ann(
    dataset: &[Example],
    n_classes: usize,
    config: &AnnTrainConfig,
) -> Result<(Mlp, AnnHistory), AnnError> {
    config.validate()?;
    let first = dataset.first().ok_or(AnnError::EmptyBatch)?;
    let n_inputs = first.0.len();
    for class in 0..n_classes {
        if !dataset.iter().any(|(_, y)| *y == class) {
            return Err(AnnError::MissingClass(class));
        }
    }
    let mut mlp = Mlp::new_seeded(n_inputs, config.hidden, n_classes, config.seed);
    mlp.check_batch(dataset)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0xA5A5_5A5A));
    let n_held = dataset.len() / 10;
    let held: Vec<Example> = order[..n_held]
        .iter()
        .map(|&i| dataset[i].clone())
        .collect();
    let train: Vec<Example> = order[n_held..]
        .iter()
        .map(|&i| dataset[i].clone())
        .collect();
    let monitor = if held.is_empty() { &train } else { &held };

    let mut history = AnnHistory::default();
    let mut velocity = mlp.zeros_like();
    let mut best = (mlp.loss(monitor)?, mlp.clone(), 0);
    for epoch in 1..=config.epochs {
        history
            .train_loss
            .push(backprop_step(&mut mlp, &train, config, &mut velocity)?);
        let held_loss = mlp.loss(monitor)?;
        history.heldout_loss.push(held_loss);
        if held_loss < best.0 {
            best = (held_loss, mlp.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    history.best_epoch = best.2;
    Ok((best.1, history))
}
