//! Trainable prediction heads.
//!
//! Both heads share a hidden layer `h = relu(W1 x + b1)`. The regression head
//! reads a score off `h`; the ordinal head reads the mean and scale of a
//! logistic distribution over fixed thresholds. Parameters live in one flat
//! vector per head so the optimizer and checkpoints handle both alike.

mod checkpoint;
mod ordinal;
mod regression;
mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CheckpointHeader, HeadKind};
pub use ordinal::{
    logistic_cdf, ordinal_forward, ordinal_loss, ordinal_output, OrdinalHead, OrdinalOutput,
    Thresholds, SCALE_FLOOR,
};
pub use regression::{head_backward, head_forward, RegressionHead};
pub use train::{train, EpochLoss, Sample, TrainOutcome};

pub const DEFAULT_HIDDEN: usize = 300;

/// Optimizer and loss settings for one training run (Adam).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Huber transition point.
    pub huber_delta: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            huber_delta: 1.0,
            patience: 10,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.batch_size > 0
            && self.huber_delta > 0.0
            && self.patience > 0
            && self.hidden > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Huber loss of a prediction against a target.
pub fn huber_loss(prediction: f64, target: f64, delta: f64) -> f64 {
    let r = (prediction - target).abs();
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`] with respect to the prediction.
pub fn huber_grad(prediction: f64, target: f64, delta: f64) -> f64 {
    (prediction - target).clamp(-delta, delta)
}

/// Operations the trainer needs from a head.
pub trait Head: Clone + Send + Sync {
    const KIND: HeadKind;

    fn input_dim(&self) -> usize;
    fn hidden(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Loss on one sample.
    fn loss(&self, x: &[f64], y: f64, huber_delta: f64) -> f64;

    /// Adds the gradient of the one-sample loss into `grad` and returns the loss.
    fn accumulate_gradient(&self, x: &[f64], y: f64, huber_delta: f64, grad: &mut [f64]) -> f64;

    /// Point prediction: a real score, or the ordinal class as a real.
    fn predict(&self, x: &[f64]) -> f64;

    /// Sets the output bias so an all-zero hidden layer predicts `mean`.
    fn set_prior(&mut self, mean: f64);
}

/// Hidden layer shared by both heads. `w1` is row-major `hidden x input`.
pub(crate) fn hidden_forward(w1: &[f64], b1: &[f64], x: &[f64], pre: &mut [f64], act: &mut [f64]) {
    let m = x.len();
    for (k, (p, a)) in pre.iter_mut().zip(act.iter_mut()).enumerate() {
        let row = &w1[k * m..(k + 1) * m];
        let z = b1[k] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        *p = z;
        *a = z.max(0.0);
    }
}

/// Backpropagates `d_act` (gradient w.r.t. hidden activations) into the
/// hidden layer's weight and bias gradients.
pub(crate) fn hidden_backward(
    pre: &[f64],
    d_act: &[f64],
    x: &[f64],
    g_w1: &mut [f64],
    g_b1: &mut [f64],
) {
    let m = x.len();
    for k in 0..pre.len() {
        if pre[k] <= 0.0 {
            continue;
        }
        let d = d_act[k];
        g_b1[k] += d;
        for (g, xi) in g_w1[k * m..(k + 1) * m].iter_mut().zip(x) {
            *g += d * xi;
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(out: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = rng.random_range(-bound..=bound);
    }
}
