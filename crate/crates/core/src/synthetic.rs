//! Synthetic essays with planted personality signal, for offline runs.
//!
//! Each author gets a latent level per trait and facet. Item scores are
//! noisy roundings of the facet level, and every item is mentioned in one
//! to three sentences whose wording encodes the author's response. The
//! wording is registered in a [`TopicRegistry`] so a
//! [`DeterministicBackend`](crate::embedding::DeterministicBackend) places
//! it on the item's axis with matching polarity. Off-topic filler, some of
//! it with anonymization placeholders, is mixed in.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemDefinition};
use crate::embedding::{item_tag, TopicRegistry};
use crate::error::{Error, Result};
use crate::textprep::EssayRecord;

/// Agreement phrases indexed by response - 1.
const AGREEMENT: [&str; 5] = [
    "this is not me at all",
    "this is mostly not me",
    "this is only partly true of me",
    "this is mostly me",
    "this is exactly me",
];

const FRAMES: [&str; 4] = [
    "Honestly, {a}: {s}",
    "If asked, I would say {a}: {s}",
    "People who know me would say {a}: {s}",
    "Thinking it over, {a}: {s}",
];

const FILLER: [&str; 16] = [
    "The bus was late again this morning.",
    "We had pasta for dinner on Sunday.",
    "My phone battery died halfway through the day.",
    "<PERSON> and I walked to the market after class.",
    "The library closes early during the holidays.",
    "It rained for most of the week.",
    "<PERSON> lent me a book about old ships.",
    "I still have to finish the lab report.",
    "The coffee machine on our floor is broken.",
    "Last summer we drove to the coast with <PERSON>.",
    "The new schedule starts next Monday.",
    "There is construction noise outside the window.",
    "I bought a second-hand bike in <LOCATION>.",
    "The train to the city takes about an hour.",
    "Our team meeting moved to Thursday.",
    "The garden needs watering every other day.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub authors: usize,
    pub seed: u64,
    /// Spread of trait levels around the scale midpoint.
    pub trait_sd: f64,
    /// Spread of facets around their trait.
    pub facet_sd: f64,
    /// Spread of item scores around their facet.
    pub item_sd: f64,
    /// Chance that a sentence voices a response one step off the survey answer.
    pub wording_noise: f64,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            authors: 400,
            seed: 0,
            trait_sd: 0.6,
            facet_sd: 0.35,
            item_sd: 0.7,
            wording_noise: 0.3,
            min_filler: 3,
            max_filler: 8,
        }
    }
}

pub struct SyntheticCorpus {
    pub records: Vec<EssayRecord>,
    /// Catalog statements plus every generated item sentence.
    pub registry: TopicRegistry,
}

fn sentence(item: &ItemDefinition, response: i32, frame: &str) -> String {
    frame
        .replace("{a}", AGREEMENT[(response - 1) as usize])
        .replace("{s}", &item.statement)
}

/// Polarity of a sentence: positive means a high item score.
fn polarity(item: &ItemDefinition, response: i32) -> f64 {
    let score = if item.reverse_keyed { 6 - response } else { response };
    (score - 3) as f64 / 2.0
}

/// Builds `config.authors` essays with survey responses.
pub fn generate(catalog: &Catalog, config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if config.authors == 0
        || config.min_filler > config.max_filler
        || !(0.0..=1.0).contains(&config.wording_noise)
    {
        return Err(Error::Config(format!("invalid synthetic configuration {config:?}")));
    }
    let normal = |sd: f64| {
        Normal::new(0.0, sd).map_err(|e| Error::Config(format!("standard deviation {sd}: {e}")))
    };
    let (trait_n, facet_n, item_n) = (
        normal(config.trait_sd)?,
        normal(config.facet_sd)?,
        normal(config.item_sd)?,
    );

    let mut registry = TopicRegistry::from_catalog(catalog);
    for item in catalog.items() {
        for response in 1..=5 {
            for frame in FRAMES {
                registry.push(
                    sentence(item, response, frame),
                    item_tag(item.item_id),
                    polarity(item, response),
                );
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.authors);
    for a in 0..config.authors {
        let traits: Vec<f64> = (0..catalog.traits().len())
            .map(|_| 3.0 + trait_n.sample(&mut rng))
            .collect();
        let facets: Vec<f64> = (0..catalog.facets().len())
            .map(|f| traits[catalog.facet_trait(f)] + facet_n.sample(&mut rng))
            .collect();
        let mut sentences = Vec::new();
        let mut responses = Vec::with_capacity(catalog.items().len());
        for (i, item) in catalog.items().iter().enumerate() {
            let latent = facets[catalog.item_facet(i)] + item_n.sample(&mut rng);
            let score = latent.round().clamp(1.0, 5.0) as i32;
            let response = if item.reverse_keyed { 6 - score } else { score };
            responses.push(response);
            let p = (score - 1) as f64 / 4.0;
            let extra = Binomial::new(2, p).expect("p within [0, 1]").sample(&mut rng);
            for _ in 0..=extra {
                let frame = FRAMES.choose(&mut rng).expect("non-empty");
                let voiced = if rng.random_bool(config.wording_noise) {
                    let step = if rng.random_bool(0.5) { 1 } else { -1 };
                    (response + step).clamp(1, 5)
                } else {
                    response
                };
                sentences.push(sentence(item, voiced, frame));
            }
        }
        let n_filler = rng.random_range(config.min_filler..=config.max_filler);
        sentences.extend(
            FILLER
                .choose_multiple(&mut rng, n_filler.min(FILLER.len()))
                .map(|s| s.to_string()),
        );
        sentences.shuffle(&mut rng);
        records.push(EssayRecord {
            author_id: format!("syn{a:04}"),
            text: sentences.join(" "),
            responses: Some(responses),
        });
    }
    Ok(SyntheticCorpus { records, registry })
}
