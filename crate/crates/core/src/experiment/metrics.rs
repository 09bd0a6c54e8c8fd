use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Level, Target, N_FACETS, N_ITEMS, N_TRAITS};
use crate::error::{Error, Result};

/// The constant predictor: mean of the training scores.
pub fn baseline_predict(train_scores: &[f64]) -> Result<f64> {
    if train_scores.is_empty() {
        return Err(Error::Contract("baseline needs at least one training score".into()));
    }
    Ok(train_scores.iter().sum::<f64>() / train_scores.len() as f64)
}

fn check_lengths(predictions: &[f64], truths: &[f64]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("metric over zero predictions".into()));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    Ok(predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Fraction of predictions within `epsilon` of the truth, boundary included.
pub fn accuracy_at(predictions: &[f64], truths: &[f64], epsilon: f64) -> Result<f64> {
    check_lengths(predictions, truths)?;
    if epsilon <= 0.0 {
        return Err(Error::Contract(format!("epsilon {epsilon} must be positive")));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() <= epsilon)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// One author's predictions at the trained level plus every coarser level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub level: Level,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub facet_scores: Option<Vec<f64>>,
    pub trait_scores: Vec<f64>,
}

impl PredictionSet {
    pub fn at(&self, target: Target) -> Option<f64> {
        match target.level {
            Level::Trait => self.trait_scores.get(target.index).copied(),
            Level::Facet => self.facet_scores.as_ref()?.get(target.index).copied(),
            Level::Item => self.item_scores.as_ref()?.get(target.index).copied(),
        }
    }
}

/// Averages child predictions up the item -> facet -> trait hierarchy.
/// `predictions[i]` belongs to target `i` at `level`.
pub fn aggregate_predictions(
    level: Level,
    predictions: &[Option<f64>],
    catalog: &Catalog,
) -> Result<PredictionSet> {
    let expected = catalog.len_at(level);
    if predictions.len() != expected {
        return Err(Error::Contract(format!(
            "expected {expected} {level} predictions, got {}",
            predictions.len()
        )));
    }
    let complete = |vals: &[Option<f64>], level: Level| -> Result<Vec<f64>> {
        vals.iter()
            .enumerate()
            .map(|(index, v)| {
                v.ok_or_else(|| {
                    Error::Contract(format!(
                        "missing prediction for {}",
                        catalog.target_name(Target { level, index })
                    ))
                })
            })
            .collect()
    };
    let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| xs.sum::<f64>() / n as f64;

    let values = complete(predictions, level)?;
    let (items, facets) = match level {
        Level::Item => {
            let facets: Vec<f64> = (0..N_FACETS)
                .map(|f| mean(&mut catalog.facet_items(f).iter().map(|&i| values[i]), 4))
                .collect();
            (Some(values), facets)
        }
        Level::Facet => (None, values),
        Level::Trait => {
            return Ok(PredictionSet {
                level,
                item_scores: None,
                facet_scores: None,
                trait_scores: values,
            })
        }
    };
    let traits: Vec<f64> = (0..N_TRAITS)
        .map(|t| mean(&mut catalog.trait_facets(t).iter().map(|&f| facets[f]), 3))
        .collect();
    debug_assert!(items.as_ref().is_none_or(|i| i.len() == N_ITEMS));
    Ok(PredictionSet {
        level,
        item_scores: items,
        facet_scores: Some(facets),
        trait_scores: traits,
    })
}
