use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How test sets are drawn across folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStrategy {
    /// Every fold is a fresh random 80/20 split.
    #[default]
    Resample,
    /// One shuffle; each fold's test window slides along it.
    Rotate,
}

impl std::str::FromStr for FoldStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resample" => Ok(Self::Resample),
            "rotate" => Ok(Self::Rotate),
            other => Err(Error::Config(format!("unknown fold strategy '{other}'"))),
        }
    }
}

/// One split of the authors (by dataset index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Builds `n_folds` plans over `n_authors`. Test sets take `round(0.2 n)`
/// authors; validation takes `floor(0.1 m)` of the remaining `m`. Fold `f`
/// shuffles with seed `super::fold_seed(seed, f)`.
pub fn make_folds(
    n_authors: usize,
    n_folds: usize,
    seed: u64,
    strategy: FoldStrategy,
) -> Result<Vec<FoldPlan>> {
    if n_folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    if n_authors < 10 || n_authors < n_folds {
        return Err(Error::Config(format!(
            "dataset of {n_authors} authors is too small for {n_folds} folds (need at least 10)"
        )));
    }
    let n_test = (0.2 * n_authors as f64).round() as usize;
    let n_val = (n_authors - n_test) / 10;

    let split = |fold_id: usize, order: &[usize], seed: u64| {
        let (test, rest) = order.split_at(n_test);
        let (validation, train) = rest.split_at(n_val);
        FoldPlan {
            fold_id,
            train: train.to_vec(),
            validation: validation.to_vec(),
            test: test.to_vec(),
            seed,
        }
    };

    let plans = match strategy {
        FoldStrategy::Resample => (1..=n_folds)
            .map(|f| {
                let s = super::fold_seed(seed, f);
                let mut order: Vec<usize> = (0..n_authors).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                split(f, &order, s)
            })
            .collect(),
        FoldStrategy::Rotate => {
            let mut base: Vec<usize> = (0..n_authors).collect();
            base.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (1..=n_folds)
                .map(|f| {
                    let offset = (f - 1) * n_authors / n_folds;
                    let mut order = base.clone();
                    order.rotate_left(offset);
                    let s = super::fold_seed(seed, f);
                    let (head, tail) = order.split_at(n_test);
                    // shuffle the non-test remainder so validation differs per fold
                    let mut tail = tail.to_vec();
                    tail.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                    let order: Vec<usize> = head.iter().copied().chain(tail).collect();
                    split(f, &order, s)
                })
                .collect()
        }
    };
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sizes_for_100_authors() {
        for strategy in [FoldStrategy::Resample, FoldStrategy::Rotate] {
            let plans = make_folds(100, 10, 0, strategy).unwrap();
            assert_eq!(plans.len(), 10);
            for p in &plans {
                assert_eq!((p.test.len(), p.validation.len(), p.train.len()), (20, 8, 72));
                let all: HashSet<usize> =
                    p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
                assert_eq!(all.len(), 100);
            }
        }
    }

    #[test]
    fn deterministic_and_varied() {
        let a = make_folds(57, 10, 3, FoldStrategy::Resample).unwrap();
        assert_eq!(a, make_folds(57, 10, 3, FoldStrategy::Resample).unwrap());
        let tests: HashSet<Vec<usize>> = a.iter().map(|p| p.test.clone()).collect();
        assert!(tests.len() > 1);
        assert_ne!(a, make_folds(57, 10, 4, FoldStrategy::Resample).unwrap());
    }

    #[test]
    fn rotation_covers_everyone() {
        let plans = make_folds(50, 10, 1, FoldStrategy::Rotate).unwrap();
        let tested: HashSet<usize> = plans.iter().flat_map(|p| p.test.iter().copied()).collect();
        assert_eq!(tested.len(), 50);
    }

    #[test]
    fn too_small() {
        assert!(make_folds(9, 10, 0, FoldStrategy::Resample).is_err());
        assert!(make_folds(20, 0, 0, FoldStrategy::Resample).is_err());
        assert!(make_folds(10, 10, 0, FoldStrategy::Resample).is_ok());
    }
}
