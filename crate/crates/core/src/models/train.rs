use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Head, TrainConfig};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// One training example borrowed from a feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<H> {
    /// Parameters from the epoch with the lowest validation loss.
    pub head: H,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

fn mean_loss<H: Head>(head: &H, data: &[Sample<'_>], huber_delta: f64) -> f64 {
    data.iter().map(|s| head.loss(s.x, s.y, huber_delta)).sum::<f64>() / data.len() as f64
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// Each epoch visits the training set in an order drawn from a generator
/// seeded with `config.seed`, so equal seeds give bit-identical results.
pub fn train<H: Head>(
    mut head: H,
    train_set: &[Sample<'_>],
    config: &TrainConfig,
    validation: &[Sample<'_>],
) -> Result<TrainOutcome<H>> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation sets".into()));
    }
    let dim = head.input_dim();
    if let Some(s) = train_set.iter().chain(validation).find(|s| s.x.len() != dim) {
        return Err(Error::Contract(format!(
            "sample dimension {} does not match head input {dim}",
            s.x.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(head.params().len(), config.learning_rate);
    let mut grad = vec![0.0; head.params().len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = head.clone();
    let mut best_loss = mean_loss(&head, validation, config.huber_delta);
    let mut best_epoch = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let s = train_set[i];
                batch_loss += head.accumulate_gradient(s.x, s.y, config.huber_delta, &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, batch });
            }
            let n = chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            adam.update(head.params_mut(), &grad);
            epoch_loss += batch_loss;
        }
        let val = mean_loss(&head, validation, config.huber_delta);
        if !val.is_finite() {
            return Err(Error::NonFinite { epoch, batch: 0 });
        }
        history.push(EpochLoss {
            epoch,
            train: epoch_loss / train_set.len() as f64,
            validation: val,
        });
        if val < best_loss {
            best_loss = val;
            best = head.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        head: best,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{OrdinalHead, RegressionHead};

    fn linear_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys = xs
            .iter()
            .map(|x| 3.0 + 0.8 * x[0] - 0.5 * x[2] + rng.random_range(-0.05..0.05))
            .collect();
        (xs, ys)
    }

    fn samples<'a>(xs: &'a [Vec<f64>], ys: &[f64]) -> Vec<Sample<'a>> {
        xs.iter().zip(ys).map(|(x, &y)| Sample { x, y }).collect()
    }

    fn mae<H: Head>(h: &H, data: &[Sample<'_>]) -> f64 {
        data.iter().map(|s| (h.predict(s.x) - s.y).abs()).sum::<f64>() / data.len() as f64
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            hidden: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn descends_on_linear_data() {
        let (xs, ys) = linear_data(200, 1);
        let data = samples(&xs, &ys);
        let (tr, va) = data.split_at(180);
        let head = RegressionHead::init(4, 8, 3);
        let before = mae(&head, tr);
        let out = train(head, tr, &config(), va).unwrap();
        assert!(mae(&out.head, tr) < before);
        assert!(mae(&out.head, tr) < 0.1, "{}", mae(&out.head, tr));
        assert!(out.best_epoch > 0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (xs, ys) = linear_data(100, 2);
        let data = samples(&xs, &ys);
        let (tr, va) = data.split_at(90);
        let a = train(RegressionHead::init(4, 8, 3), tr, &config(), va).unwrap();
        let b = train(RegressionHead::init(4, 8, 3), tr, &config(), va).unwrap();
        let bits = |h: &RegressionHead| h.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.head), bits(&b.head));
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn constant_target_is_learned() {
        let (xs, _) = linear_data(120, 3);
        let ys = vec![3.0; xs.len()];
        let data = samples(&xs, &ys);
        let (tr, va) = data.split_at(100);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            hidden: 8,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(RegressionHead::init(4, 8, 1), tr, &cfg, va).unwrap();
        for s in tr {
            assert!((out.head.predict(s.x) - 3.0).abs() < 0.05, "{} at epoch {} of {}", out.head.predict(s.x), out.best_epoch, out.history.len());
        }
    }

    #[test]
    fn ordinal_head_learns_classes() {
        let (xs, _) = linear_data(300, 4);
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 + 2.0 * x[0]).round().clamp(1.0, 5.0)).collect();
        let data = samples(&xs, &ys);
        let (tr, va) = data.split_at(270);
        let mut head = OrdinalHead::init(4, 8, 2);
        head.set_prior(3.0);
        let out = train(head, tr, &config(), va).unwrap();
        let hits = tr.iter().filter(|s| out.head.predict(s.x) == s.y).count();
        assert!(hits as f64 / tr.len() as f64 > 0.8, "{hits}");
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let xs = vec![vec![f64::MAX, 1.0]; 4];
        let ys = vec![1.0; 4];
        let data = samples(&xs, &ys);
        let mut head = RegressionHead::zeros(2, 2);
        head.b1_mut().fill(1.0);
        head.w1_mut().fill(10.0);
        head.w2_mut().fill(1.0);
        match train(head, &data, &config(), &data) {
            Err(Error::NonFinite { epoch, batch }) => assert_eq!((epoch, batch), (1, 0)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_sets_and_bad_shapes() {
        let xs = vec![vec![1.0, 2.0]];
        let ys = vec![1.0];
        let data = samples(&xs, &ys);
        let h = RegressionHead::zeros(2, 2);
        assert!(train(h.clone(), &[], &config(), &data).is_err());
        assert!(train(h.clone(), &data, &config(), &[]).is_err());
        assert!(train(RegressionHead::zeros(3, 2), &data, &config(), &data).is_err());
    }
}
