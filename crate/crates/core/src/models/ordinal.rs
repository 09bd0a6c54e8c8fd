use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{glorot, hidden_backward, hidden_forward, huber_grad, huber_loss, Head, HeadKind};
use crate::error::{Error, Result};

/// Added to `softplus(raw)` so the scale never collapses to zero.
pub const SCALE_FLOOR: f64 = 0.01;
const PROB_CLAMP: f64 = 1e-7;

/// The fixed cut points θ0..θ5 between the five ordinal classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds([f64; 6]);

impl Thresholds {
    pub const FIXED: Thresholds = Thresholds([0.5, 1.5, 2.5, 3.5, 4.5, 5.5]);

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::FIXED
    }
}

/// Logistic CDF with location `mu` and scale `s`.
pub fn logistic_cdf(z: f64, mu: f64, s: f64) -> f64 {
    1.0 / (1.0 + (-(z - mu) / s).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalOutput {
    pub mu: f64,
    pub s: f64,
    /// `cum[j] = P(y < θj)` under the logistic model, j = 0..=5.
    pub cum: [f64; 6],
    /// `interval[j-1] = cum[j] - cum[j-1]` for classes j = 1..=5.
    pub interval: [f64; 5],
    /// Class with the largest interval mass; ties go to the lower class.
    pub prediction: u8,
}

/// Class probabilities for a given location and scale.
pub fn ordinal_output(mu: f64, s: f64) -> OrdinalOutput {
    let theta = Thresholds::FIXED.0;
    let mut cum = [0.0; 6];
    for (c, t) in cum.iter_mut().zip(theta) {
        *c = logistic_cdf(t, mu, s);
    }
    let mut interval = [0.0; 5];
    for j in 1..=5 {
        interval[j - 1] = cum[j] - cum[j - 1];
    }
    OrdinalOutput {
        mu,
        s,
        cum,
        interval,
        prediction: argmax_low(&interval),
    }
}

/// 1-based index of the largest entry, preferring the lowest on ties.
fn argmax_low(interval: &[f64; 5]) -> u8 {
    let mut best = 0;
    for j in 1..5 {
        if interval[j] > interval[best] {
            best = j;
        }
    }
    best as u8 + 1
}

/// Binary cross-entropy of the cumulative probabilities against
/// `t_j = 1{y < θj}` (j = 1..=5) plus Huber loss between `mu` and `y`.
pub fn ordinal_loss(out: &OrdinalOutput, y: u8, huber_delta: f64) -> f64 {
    let theta = Thresholds::FIXED.0;
    let yf = f64::from(y);
    let mut bce = 0.0;
    for j in 1..=5 {
        let t = if yf < theta[j] { 1.0 } else { 0.0 };
        let p = out.cum[j].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        bce -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    bce + huber_loss(out.mu, yf, huber_delta)
}

/// Loss and its partial derivatives with respect to `mu` and `s`.
fn loss_and_grads(mu: f64, s: f64, y: f64, huber_delta: f64) -> (f64, f64, f64) {
    let theta = Thresholds::FIXED.0;
    let (mut loss, mut d_mu, mut d_s) = (0.0, 0.0, 0.0);
    for &th in &theta[1..] {
        let t = if y < th { 1.0 } else { 0.0 };
        let z = (th - mu) / s;
        let p = sigmoid(z);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            let d_z = p - t;
            d_mu -= d_z / s;
            d_s -= d_z * z / s;
        }
    }
    loss += huber_loss(mu, y, huber_delta);
    d_mu += huber_grad(mu, y, huber_delta);
    (loss, d_mu, d_s)
}

/// Two-output head: `mu = W_mu·h + b_mu`, `s = softplus(W_s·h + b_s) + 0.01`
/// over the shared hidden layer `h`.
///
/// Flat layout: `W1`, `b1`, `W_mu`, `b_mu`, `W_s`, `b_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalHead {
    input: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl OrdinalHead {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        input * hidden + 3 * hidden + 2
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; Self::param_count(input, hidden)],
        }
    }

    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut head = Self::zeros(input, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w1, rest) = head.params.split_at_mut(input * hidden);
        glorot(w1, input, hidden, &mut rng);
        glorot(&mut rest[hidden..2 * hidden], hidden, 1, &mut rng);
        glorot(&mut rest[2 * hidden + 1..3 * hidden + 1], hidden, 1, &mut rng);
        head
    }

    pub fn from_params(input: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(input, hidden) {
            return Err(Error::Contract(format!(
                "ordinal head {input}x{hidden} needs {} parameters, got {}",
                Self::param_count(input, hidden),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("non-finite head parameter".into()));
        }
        Ok(Self {
            input,
            hidden,
            params,
        })
    }

    fn offsets(&self) -> (usize, usize, usize, usize, usize) {
        let w1 = self.input * self.hidden;
        let b1 = w1;
        let w_mu = b1 + self.hidden;
        let b_mu = w_mu + self.hidden;
        let w_s = b_mu + 1;
        (b1, w_mu, b_mu, w_s, w_s + self.hidden)
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.input * self.hidden]
    }

    pub fn b1(&self) -> &[f64] {
        let (b1, w_mu, ..) = self.offsets();
        &self.params[b1..w_mu]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let (b1, w_mu, ..) = self.offsets();
        &mut self.params[b1..w_mu]
    }

    pub fn w_mu(&self) -> &[f64] {
        let (_, w_mu, b_mu, ..) = self.offsets();
        &self.params[w_mu..b_mu]
    }

    pub fn b_mu(&self) -> f64 {
        self.params[self.offsets().2]
    }

    pub fn w_s(&self) -> &[f64] {
        let (.., w_s, b_s) = self.offsets();
        &self.params[w_s..b_s]
    }

    pub fn b_s(&self) -> f64 {
        self.params[self.offsets().4]
    }

    pub fn set_b_s(&mut self, v: f64) {
        let i = self.offsets().4;
        self.params[i] = v;
    }

    /// Hidden pre-activations, activations, `mu`, raw scale and `s`.
    fn forward_parts(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64, f64) {
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        hidden_forward(self.w1(), self.b1(), x, &mut pre, &mut act);
        let mu = self.b_mu() + self.w_mu().iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        let raw = self.b_s() + self.w_s().iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        (pre, act, mu, raw, softplus(raw) + SCALE_FLOOR)
    }
}

/// Forward pass of an ordinal head.
pub fn ordinal_forward(head: &OrdinalHead, x: &[f64]) -> Result<OrdinalOutput> {
    if x.len() != head.input {
        return Err(Error::Contract(format!(
            "head expects input dimension {}, got {}",
            head.input,
            x.len()
        )));
    }
    let (_, _, mu, _, s) = head.forward_parts(x);
    Ok(ordinal_output(mu, s))
}

impl Head for OrdinalHead {
    const KIND: HeadKind = HeadKind::Ordinal;

    fn input_dim(&self) -> usize {
        self.input
    }

    fn hidden(&self) -> usize {
        self.hidden
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss(&self, x: &[f64], y: f64, huber_delta: f64) -> f64 {
        let (_, _, mu, _, s) = self.forward_parts(x);
        loss_and_grads(mu, s, y, huber_delta).0
    }

    fn accumulate_gradient(&self, x: &[f64], y: f64, huber_delta: f64, grad: &mut [f64]) -> f64 {
        let (pre, act, mu, raw, s) = self.forward_parts(x);
        let (loss, d_mu, d_s) = loss_and_grads(mu, s, y, huber_delta);
        let d_raw = d_s * sigmoid(raw);
        let (b1, w_mu, b_mu, w_s, b_s) = self.offsets();
        let h = self.hidden;
        let mut d_act = vec![0.0; h];
        for k in 0..h {
            grad[w_mu + k] += d_mu * act[k];
            grad[w_s + k] += d_raw * act[k];
            d_act[k] = d_mu * self.params[w_mu + k] + d_raw * self.params[w_s + k];
        }
        grad[b_mu] += d_mu;
        grad[b_s] += d_raw;
        let (g_w1, rest) = grad.split_at_mut(b1);
        hidden_backward(&pre, &d_act, x, g_w1, &mut rest[..h]);
        loss
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let (_, _, mu, _, s) = self.forward_parts(x);
        f64::from(ordinal_output(mu, s).prediction)
    }

    /// Centers the distribution on `mean` with unit scale.
    fn set_prior(&mut self, mean: f64) {
        let i = self.offsets().2;
        self.params[i] = mean;
        // softplus(raw) + 0.01 = 1
        self.set_b_s((0.99f64).exp_m1().ln());
    }
}
