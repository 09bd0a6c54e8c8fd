use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{glorot, hidden_backward, hidden_forward, huber_grad, huber_loss, Head, HeadKind};
use crate::error::{Error, Result};

/// `y = W2 · relu(W1 x + b1) + b2`.
///
/// Flat layout: `W1` (hidden x input, row-major), `b1`, `W2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    input: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl RegressionHead {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        input * hidden + 2 * hidden + 1
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            params: vec![0.0; Self::param_count(input, hidden)],
        }
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut head = Self::zeros(input, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w1, rest) = head.params.split_at_mut(input * hidden);
        glorot(w1, input, hidden, &mut rng);
        glorot(&mut rest[hidden..2 * hidden], hidden, 1, &mut rng);
        head
    }

    pub fn from_params(input: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(input, hidden) {
            return Err(Error::Contract(format!(
                "regression head {input}x{hidden} needs {} parameters, got {}",
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

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.input * self.hidden]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.input * self.hidden;
        &self.params[o..o + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.input * self.hidden + self.hidden;
        &self.params[o..o + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.input * self.hidden;
        &mut self.params[..n]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.input * self.hidden;
        &mut self.params[o..o + self.hidden]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.input * self.hidden + self.hidden;
        &mut self.params[o..o + self.hidden]
    }

    pub fn set_b2(&mut self, v: f64) {
        let n = self.params.len();
        self.params[n - 1] = v;
    }

    fn forward_parts(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        hidden_forward(self.w1(), self.b1(), x, &mut pre, &mut act);
        let y = self.b2() + self.w2().iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        (pre, act, y)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Contract(format!(
                "head expects input dimension {}, got {}",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }
}

/// Forward pass of a regression head.
pub fn head_forward(head: &RegressionHead, x: &[f64]) -> Result<f64> {
    head.check_input(x)?;
    Ok(head.forward_parts(x).2)
}

/// Gradient of `huber_loss(head_forward(head, x), y, delta)` laid out like
/// the head itself.
pub fn head_backward(head: &RegressionHead, x: &[f64], y: f64, delta: f64) -> Result<RegressionHead> {
    head.check_input(x)?;
    let mut grad = RegressionHead::zeros(head.input, head.hidden);
    head.accumulate_gradient(x, y, delta, &mut grad.params);
    Ok(grad)
}

impl Head for RegressionHead {
    const KIND: HeadKind = HeadKind::Regression;

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
        huber_loss(self.forward_parts(x).2, y, huber_delta)
    }

    fn accumulate_gradient(&self, x: &[f64], y: f64, huber_delta: f64, grad: &mut [f64]) -> f64 {
        let (pre, act, out) = self.forward_parts(x);
        let d_out = huber_grad(out, y, huber_delta);
        let (m, h) = (self.input, self.hidden);
        let (g_w1, rest) = grad.split_at_mut(m * h);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(h);
        g_b2[0] += d_out;
        let mut d_act = vec![0.0; h];
        for k in 0..h {
            g_w2[k] += d_out * act[k];
            d_act[k] = d_out * self.w2()[k];
        }
        hidden_backward(&pre, &d_act, x, g_w1, g_b1);
        huber_loss(out, y, huber_delta)
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.forward_parts(x).2
    }

    fn set_prior(&mut self, mean: f64) {
        self.set_b2(mean);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_predicts_zero() {
        let h = RegressionHead::zeros(5, 3);
        assert_eq!(head_forward(&h, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn unit_bias_sums_hidden_units() {
        let mut h = RegressionHead::zeros(768, 300);
        h.b1_mut().fill(1.0);
        h.w2_mut().fill(1.0);
        let x = vec![0.3; 768];
        assert_eq!(head_forward(&h, &x).unwrap(), 300.0);
    }

    #[test]
    fn zero_gradient_at_target() {
        let h = RegressionHead::init(4, 6, 11);
        let x = [0.2, -0.4, 1.0, 0.7];
        let y = head_forward(&h, &x).unwrap();
        let g = head_backward(&h, &x, y, 1.0).unwrap();
        assert!(g.params().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_unit_gets_no_incoming_gradient() {
        let mut h = RegressionHead::init(3, 4, 2);
        h.b1_mut()[1] = -100.0;
        let x = [0.5, 0.1, -0.3];
        let g = head_backward(&h, &x, 10.0, 1.0).unwrap();
        assert!(g.w1()[3..6].iter().all(|&v| v == 0.0));
        assert_eq!(g.b1()[1], 0.0);
        assert_eq!(g.w2()[1], 0.0);
    }

    #[test]
    fn shape_checks() {
        let h = RegressionHead::zeros(3, 2);
        assert!(head_forward(&h, &[1.0]).is_err());
        assert!(RegressionHead::from_params(3, 2, vec![0.0; 5]).is_err());
        assert!(RegressionHead::from_params(3, 2, vec![0.0; 11]).is_ok());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = RegressionHead::init(10, 5, 1);
        assert_eq!(a, RegressionHead::init(10, 5, 1));
        assert_ne!(a, RegressionHead::init(10, 5, 2));
        let bound = (6.0f64 / 15.0).sqrt();
        assert!(a.w1().iter().all(|w| w.abs() <= bound));
        assert!(a.b1().iter().all(|&b| b == 0.0));
    }
}
