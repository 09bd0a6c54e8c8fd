use std::collections::HashMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{make_folds, FoldPlan, FoldStrategy};
use super::metrics::{accuracy_at, aggregate_predictions, baseline_predict, mae};
use super::report::{FoldMetrics, MetricReport, TargetMetric};
use super::{DEFAULT_EPSILON, DEFAULT_FOLDS};
use crate::catalog::{score_sheet, Catalog, Level, ScoreSheet, Target};
use crate::embedding::{embed_batch, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::models::{
    train, Checkpoint, Head, OrdinalHead, RegressionHead, Sample, TrainConfig,
};
use crate::textprep::{split_sentences, EssayRecord};
use crate::tpot::{pool_with_profile, relevance_profile, CatalogEmbeddings, RelevanceRecord, DEFAULT_DELTA};

/// Texts per backend request while preparing a corpus.
const EMBED_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Training-set mean.
    Baseline,
    /// Regression head on the truncated whole-essay embedding.
    M1,
    /// Regression head on the TPoT document embedding.
    M2,
    /// Ordinal head on the TPoT document embedding; item level only.
    M3,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M3 => "m3",
        }
    }

    pub fn uses_tpot(self) -> bool {
        matches!(self, ModelKind::M2 | ModelKind::M3)
    }

    pub fn check_level(self, level: Level) -> Result<()> {
        if self == ModelKind::M3 && level != Level::Item {
            return Err(Error::Config(format!(
                "the ordinal model predicts item scores; level {level} is not supported"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Seed of fold `fold_id` (1-based): `seed + 1000 * fold_id`.
pub fn fold_seed(seed: u64, fold_id: usize) -> u64 {
    seed.wrapping_add(1000u64.wrapping_mul(fold_id as u64))
}

/// Seed of the head for target `target_index` within a fold.
/// Initialization uses it directly; batch shuffling uses it plus `2^32`.
pub fn head_seed(fold_seed: u64, target_index: usize) -> u64 {
    fold_seed.wrapping_add(target_index as u64)
}

const SHUFFLE_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub seed: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub strategy: FoldStrategy,
    pub train: TrainConfig,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    /// Keep per-sentence relevance for every (author, target) pair.
    pub dump_relevance: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
            strategy: FoldStrategy::Resample,
            train: TrainConfig::default(),
            jobs: 0,
            dump_relevance: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0, 1)", self.delta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.folds == 0 {
            return Err(Error::Config("need at least one fold".into()));
        }
        self.train.validate()
    }
}

/// Sentence or essay embeddings for a whole corpus, computed once.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub author_ids: Vec<String>,
    /// Per author, one vector per sentence (TPoT models).
    pub sentences: Option<Vec<Vec<EmbeddingVector>>>,
    /// Per author, the truncated essay embedding (model 1).
    pub essays: Option<Vec<EmbeddingVector>>,
    pub dim: usize,
}

/// Turns essays into head inputs for a given model and target.
pub struct Featurizer<'a, B: ?Sized> {
    pub backend: &'a B,
    pub catalog: &'a Catalog,
    pub items: Option<&'a CatalogEmbeddings>,
    pub delta: f64,
}

/// Head inputs for one target over a corpus.
pub struct TargetFeatures {
    pub rows: Vec<Vec<f64>>,
    pub relevance: Vec<RelevanceRecord>,
    pub degenerate: usize,
}

impl<B: EmbeddingBackend + ?Sized> Featurizer<'_, B> {
    pub fn prepare(&self, records: &[EssayRecord], model: ModelKind) -> Result<PreparedCorpus> {
        let author_ids = records.iter().map(|r| r.author_id.clone()).collect();
        let dim = self.backend.descriptor().dim;
        match model {
            ModelKind::Baseline => Ok(PreparedCorpus {
                author_ids,
                sentences: None,
                essays: None,
                dim,
            }),
            ModelKind::M1 => {
                let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
                Ok(PreparedCorpus {
                    author_ids,
                    sentences: None,
                    essays: Some(self.embed_all(&texts)?),
                    dim,
                })
            }
            ModelKind::M2 | ModelKind::M3 => {
                let split: Vec<Vec<String>> =
                    records.iter().map(|r| split_sentences(&r.text)).collect();
                // embed each distinct sentence once
                let mut index: HashMap<&str, usize> = HashMap::new();
                let mut unique: Vec<String> = Vec::new();
                for s in split.iter().flatten() {
                    index.entry(s.as_str()).or_insert_with(|| {
                        unique.push(s.clone());
                        unique.len() - 1
                    });
                }
                let vectors = self.embed_all(&unique)?;
                let sentences = split
                    .iter()
                    .map(|ss| ss.iter().map(|s| vectors[index[s.as_str()]].clone()).collect())
                    .collect();
                Ok(PreparedCorpus {
                    author_ids,
                    sentences: Some(sentences),
                    essays: None,
                    dim,
                })
            }
        }
    }

    fn embed_all(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for (i, chunk) in texts.chunks(EMBED_CHUNK).enumerate() {
            log::debug!("embedding chunk {i} ({} texts)", chunk.len());
            out.extend(embed_batch(self.backend, chunk)?);
        }
        Ok(out)
    }

    /// Inputs for `target`. Essays without any relevant sentence map to the
    /// zero vector and are counted as degenerate.
    pub fn features(
        &self,
        corpus: &PreparedCorpus,
        model: ModelKind,
        target: Target,
        keep_relevance: bool,
    ) -> Result<TargetFeatures> {
        match model {
            ModelKind::Baseline => Ok(TargetFeatures {
                rows: vec![Vec::new(); corpus.author_ids.len()],
                relevance: Vec::new(),
                degenerate: 0,
            }),
            ModelKind::M1 => {
                let essays = corpus
                    .essays
                    .as_ref()
                    .ok_or_else(|| Error::Contract("corpus prepared without essay embeddings".into()))?;
                Ok(TargetFeatures {
                    rows: essays.iter().map(|e| e.as_slice().to_vec()).collect(),
                    relevance: Vec::new(),
                    degenerate: 0,
                })
            }
            ModelKind::M2 | ModelKind::M3 => {
                let sentences = corpus.sentences.as_ref().ok_or_else(|| {
                    Error::Contract("corpus prepared without sentence embeddings".into())
                })?;
                let items = self.items.ok_or_else(|| {
                    Error::MissingArtifact("catalog embeddings are required for TPoT models".into())
                })?;
                if items.backend.dim != corpus.dim {
                    return Err(Error::Contract(format!(
                        "catalog embeddings have dimension {}, sentences {}",
                        items.backend.dim, corpus.dim
                    )));
                }
                let te = items.target(self.catalog, target);
                let mut out = TargetFeatures {
                    rows: Vec::with_capacity(sentences.len()),
                    relevance: Vec::new(),
                    degenerate: 0,
                };
                for (author, sents) in corpus.author_ids.iter().zip(sentences) {
                    if sents.is_empty() {
                        out.degenerate += 1;
                        out.rows.push(vec![0.0; corpus.dim]);
                        continue;
                    }
                    let profile = relevance_profile(sents, &te, self.delta)?;
                    let doc = pool_with_profile(sents, &profile, &te.target_id);
                    if doc.n_sentences_used == 0 {
                        out.degenerate += 1;
                    }
                    if keep_relevance {
                        out.relevance.push(RelevanceRecord {
                            author_id: author.clone(),
                            target: te.target_id.clone(),
                            n_used: profile.n_used(),
                            alphas: profile.alphas,
                            kept: profile.kept,
                        });
                    }
                    out.rows.push(doc.vector.into_inner());
                }
                Ok(out)
            }
        }
    }
}

/// Optional hook receiving every trained head as `(fold_id, target, checkpoint)`.
pub type CheckpointSink<'a> = &'a (dyn Fn(usize, &str, &Checkpoint) -> Result<()> + Sync);

pub struct ExperimentOutput {
    pub report: MetricReport,
    pub relevance: Vec<RelevanceRecord>,
    pub folds: Vec<FoldPlan>,
}

/// Trains one head on a fold and predicts its test authors. Regression
/// outputs are clipped to the 1..5 scale.
#[allow(clippy::too_many_arguments)]
fn fit_and_predict(
    model: ModelKind,
    rows: &[Vec<f64>],
    ys: &[f64],
    plan: &FoldPlan,
    target_index: usize,
    target_name: &str,
    config: &ExperimentConfig,
    backend: &crate::embedding::BackendDescriptor,
    sink: Option<CheckpointSink<'_>>,
) -> Result<Vec<f64>> {
    let seed = head_seed(plan.seed, target_index);
    let mut tc = config.train.clone();
    tc.seed = seed.wrapping_add(SHUFFLE_OFFSET);
    let samples = |idx: &[usize]| -> Vec<Sample<'_>> {
        idx.iter().map(|&i| Sample { x: &rows[i], y: ys[i] }).collect()
    };
    let train_ys: Vec<f64> = plan.train.iter().map(|&i| ys[i]).collect();
    let prior = baseline_predict(&train_ys)?;

    fn run<H: Head>(
        mut head: H,
        prior: f64,
        tr: &[Sample<'_>],
        va: &[Sample<'_>],
        tc: &TrainConfig,
    ) -> Result<H> {
        head.set_prior(prior);
        Ok(train(head, tr, tc, va)?.head)
    }

    let (predictions, checkpoint) = match model {
        ModelKind::Baseline => {
            // the baseline has no use for a validation split
            let all: Vec<f64> = plan.train.iter().chain(&plan.validation).map(|&i| ys[i]).collect();
            let mean = baseline_predict(&all)?;
            (
                vec![mean; plan.test.len()],
                Checkpoint::constant(mean, target_name, &tc, seed),
            )
        }
        ModelKind::M1 | ModelKind::M2 => {
            let dim = rows[plan.train[0]].len();
            let head = RegressionHead::init(dim, tc.hidden, seed);
            let head = run(head, prior, &samples(&plan.train), &samples(&plan.validation), &tc)?;
            let preds = plan
                .test
                .iter()
                .map(|&i| head.predict(&rows[i]).clamp(1.0, 5.0))
                .collect();
            (preds, Checkpoint::from_head(&head, target_name, &tc, Some(backend), seed))
        }
        ModelKind::M3 => {
            let dim = rows[plan.train[0]].len();
            let head = OrdinalHead::init(dim, tc.hidden, seed);
            let head = run(head, prior, &samples(&plan.train), &samples(&plan.validation), &tc)?;
            let preds = plan.test.iter().map(|&i| head.predict(&rows[i])).collect();
            (preds, Checkpoint::from_head(&head, target_name, &tc, Some(backend), seed))
        }
    };
    if let Some(sink) = sink {
        sink(plan.fold_id, target_name, &checkpoint)?;
    }
    Ok(predictions)
}

/// Targets reported for a model trained at `level`: the level itself and
/// every coarser one, grouped trait by trait.
fn reported_targets(catalog: &Catalog, level: Level) -> Vec<Target> {
    let mut out = Vec::new();
    for t in 0..catalog.traits().len() {
        out.push(Target { level: Level::Trait, index: t });
        if level == Level::Trait {
            continue;
        }
        for &f in catalog.trait_facets(t) {
            out.push(Target { level: Level::Facet, index: f });
            if level == Level::Item {
                for &i in catalog.facet_items(f) {
                    out.push(Target { level: Level::Item, index: i });
                }
            }
        }
    }
    out
}

/// Runs the full cross-validation protocol for one model at one level.
///
/// Every (fold, target) head is seeded from `config.seed` alone, so the
/// report is identical for any `jobs` setting.
pub fn run_experiment<B: EmbeddingBackend + ?Sized>(
    records: &[EssayRecord],
    catalog: &Catalog,
    backend: &B,
    items: Option<&CatalogEmbeddings>,
    model: ModelKind,
    level: Level,
    config: &ExperimentConfig,
    sink: Option<CheckpointSink<'_>>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    model.check_level(level)?;
    let truths: Vec<ScoreSheet> = records
        .iter()
        .map(|r| {
            let sheet = r.response_sheet().ok_or_else(|| {
                Error::Validation(format!("{}: no survey responses to evaluate against", r.author_id))
            })?;
            score_sheet(&sheet, catalog)
        })
        .collect::<Result<_>>()?;
    let plans = make_folds(records.len(), config.folds, config.seed, config.strategy)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let featurizer = Featurizer {
        backend,
        catalog,
        items,
        delta: config.delta,
    };
    let corpus = featurizer.prepare(records, model)?;
    let descriptor = backend.descriptor();
    let targets: Vec<Target> = catalog.targets(level).collect();

    // per target: features once, then every fold
    type PerTarget = (Vec<Vec<f64>>, Vec<RelevanceRecord>, usize);
    let per_target: Vec<PerTarget> = pool.install(|| {
        targets
            .par_iter()
            .map(|&target| -> Result<PerTarget> {
                let feats = featurizer.features(&corpus, model, target, config.dump_relevance)?;
                let ys: Vec<f64> = truths.iter().map(|t| t.at(target)).collect();
                let name = catalog.target_name(target);
                let preds = plans
                    .par_iter()
                    .map(|plan| {
                        fit_and_predict(
                            model,
                            &feats.rows,
                            &ys,
                            plan,
                            target.index,
                            &name,
                            config,
                            descriptor,
                            sink,
                        )
                        .map_err(|e| Error::Fold {
                            fold: plan.fold_id,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((preds, feats.relevance, feats.degenerate))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let reported = reported_targets(catalog, level);
    let mut fold_metrics = Vec::with_capacity(plans.len());
    for (f, plan) in plans.iter().enumerate() {
        let sets = (0..plan.test.len())
            .map(|k| {
                let preds: Vec<Option<f64>> = per_target.iter().map(|p| Some(p.0[f][k])).collect();
                aggregate_predictions(level, &preds, catalog)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut metrics = IndexMap::new();
        for &target in &reported {
            let preds: Vec<f64> = sets
                .iter()
                .map(|s| s.at(target).expect("aggregation covers coarser levels"))
                .collect();
            let truth: Vec<f64> = plan.test.iter().map(|&i| truths[i].at(target)).collect();
            metrics.insert(
                catalog.target_name(target),
                TargetMetric {
                    mae: mae(&preds, &truth)?,
                    acc: accuracy_at(&preds, &truth, config.epsilon)?,
                },
            );
        }
        fold_metrics.push(FoldMetrics {
            fold_id: plan.fold_id,
            n_train: plan.train.len(),
            n_validation: plan.validation.len(),
            n_test: plan.test.len(),
            targets: metrics,
        });
    }

    let degenerate: usize = per_target.iter().map(|p| p.2).sum();
    if degenerate > 0 {
        log::warn!("{degenerate} (author, target) pairs had no relevant sentence");
    }
    let relevance = per_target.into_iter().flat_map(|p| p.1).collect();
    let report = MetricReport::from_folds(
        model.as_str(),
        level,
        config.epsilon,
        config.delta,
        fold_metrics,
        degenerate,
    )?;
    Ok(ExperimentOutput {
        report,
        relevance,
        folds: plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_follow_documented_arithmetic() {
        assert_eq!(fold_seed(7, 1), 1007);
        assert_eq!(fold_seed(7, 10), 10_007);
        assert_eq!(head_seed(fold_seed(7, 2), 5), 2012);
    }

    #[test]
    fn model_parsing_and_levels() {
        for m in [ModelKind::Baseline, ModelKind::M1, ModelKind::M2, ModelKind::M3] {
            assert_eq!(m.as_str().parse::<ModelKind>().unwrap(), m);
        }
        assert!("m4".parse::<ModelKind>().is_err());
        assert!(ModelKind::M3.check_level(Level::Facet).is_err());
        assert!(ModelKind::M3.check_level(Level::Item).is_ok());
    }

    #[test]
    fn reported_target_counts() {
        let c = Catalog::bundled();
        assert_eq!(reported_targets(&c, Level::Trait).len(), 5);
        assert_eq!(reported_targets(&c, Level::Facet).len(), 20);
        assert_eq!(reported_targets(&c, Level::Item).len(), 80);
    }
}
