//! The BFI-2 instrument: 60 items, 15 facets, 5 traits, and the scoring rules
//! that turn survey responses into item, facet and trait scores.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ITEMS: usize = 60;
pub const N_FACETS: usize = 15;
pub const N_TRAITS: usize = 5;
pub const ITEMS_PER_FACET: usize = 4;
pub const FACETS_PER_TRAIT: usize = 3;

const BUNDLED: &str = include_str!("../data/bfi2.json");

/// Trait and facet acronyms in reporting order.
pub const TRAIT_ACRONYMS: [&str; N_TRAITS] = ["O", "C", "E", "A", "N"];
pub const FACET_ACRONYMS: [&str; N_FACETS] = [
    "O_Int", "O_Eas", "O_Cre", "C_Org", "C_Pro", "C_Res", "E_Soc", "E_Ass", "E_Ene", "A_Com",
    "A_Res", "A_Tru", "N_Anx", "N_Dep", "N_Emo",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDefinition {
    #[serde(rename = "id")]
    pub item_id: u8,
    pub statement: String,
    pub reverse_statement: String,
    /// Facet acronym.
    pub facet: String,
    pub reverse_keyed: bool,
}

impl ItemDefinition {
    /// Scores a raw response for this item, reversing it when the item is reverse-keyed.
    pub fn score(&self, response: i32) -> Result<f64> {
        item_score(response, self.reverse_keyed).map_err(|_| {
            Error::Validation(format!(
                "item {}: response {} outside 1..=5",
                self.item_id, response
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetDefinition {
    pub acronym: String,
    pub name: String,
    /// Owning trait acronym.
    #[serde(rename = "trait")]
    pub trait_acronym: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitDefinition {
    pub acronym: String,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    items: Vec<ItemDefinition>,
    facets: Vec<FacetDefinition>,
    traits: Vec<TraitDefinition>,
}

/// Granularity at which scores are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Trait,
    Facet,
    Item,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Trait => "trait",
            Level::Facet => "facet",
            Level::Item => "item",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trait" => Ok(Level::Trait),
            "facet" => Ok(Level::Facet),
            "item" => Ok(Level::Item),
            other => Err(Error::Config(format!("unknown level '{other}'"))),
        }
    }
}

/// A prediction target: one trait, facet or item, addressed by its position
/// in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Target {
    pub level: Level,
    pub index: usize,
}

/// The validated instrument. Items are held in `item_id` order, so item
/// index `i` is item id `i + 1`.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<ItemDefinition>,
    facets: Vec<FacetDefinition>,
    traits: Vec<TraitDefinition>,
    facet_items: Vec<[usize; ITEMS_PER_FACET]>,
    trait_facets: Vec<[usize; FACETS_PER_TRAIT]>,
    item_facet: Vec<usize>,
    facet_trait: Vec<usize>,
}

impl Catalog {
    /// The catalog compiled into the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled catalog is valid")
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CatalogFile = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("catalog does not parse: {e}")))?;
        Self::from_parts(file.items, file.facets, file.traits)
    }

    pub fn from_parts(
        mut items: Vec<ItemDefinition>,
        facets: Vec<FacetDefinition>,
        traits: Vec<TraitDefinition>,
    ) -> Result<Self> {
        let structural = |msg: String| Error::Validation(format!("catalog structure: {msg}"));

        if items.len() != N_ITEMS {
            return Err(structural(format!("expected {N_ITEMS} items, found {}", items.len())));
        }
        if facets.len() != N_FACETS {
            return Err(structural(format!("expected {N_FACETS} facets, found {}", facets.len())));
        }
        if traits.len() != N_TRAITS {
            return Err(structural(format!("expected {N_TRAITS} traits, found {}", traits.len())));
        }

        let trait_set: BTreeSet<&str> = traits.iter().map(|t| t.acronym.as_str()).collect();
        if trait_set != TRAIT_ACRONYMS.iter().copied().collect() {
            return Err(structural(format!("trait acronyms {trait_set:?} do not match BFI-2")));
        }
        let facet_set: BTreeSet<&str> = facets.iter().map(|f| f.acronym.as_str()).collect();
        if facet_set != FACET_ACRONYMS.iter().copied().collect() {
            return Err(structural(format!("facet acronyms {facet_set:?} do not match BFI-2")));
        }

        items.sort_by_key(|i| i.item_id);
        for (pos, item) in items.iter().enumerate() {
            if usize::from(item.item_id) != pos + 1 {
                return Err(structural(format!(
                    "item ids must be exactly 1..={N_ITEMS} without duplicates (found {} at position {})",
                    item.item_id,
                    pos + 1
                )));
            }
            if item.statement.trim().is_empty() || item.reverse_statement.trim().is_empty() {
                return Err(structural(format!("item {} has an empty sentence", item.item_id)));
            }
            if item.statement == item.reverse_statement {
                return Err(structural(format!(
                    "item {} statement and reverse statement are identical",
                    item.item_id
                )));
            }
        }

        let trait_pos: HashMap<&str, usize> = traits
            .iter()
            .enumerate()
            .map(|(i, t)| (t.acronym.as_str(), i))
            .collect();
        let facet_pos: HashMap<&str, usize> = facets
            .iter()
            .enumerate()
            .map(|(i, f)| (f.acronym.as_str(), i))
            .collect();

        let mut facet_trait = Vec::with_capacity(N_FACETS);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); N_TRAITS];
        for (fi, facet) in facets.iter().enumerate() {
            let ti = *trait_pos.get(facet.trait_acronym.as_str()).ok_or_else(|| {
                structural(format!(
                    "facet {} references unknown trait {}",
                    facet.acronym, facet.trait_acronym
                ))
            })?;
            if !facet.acronym.starts_with(&format!("{}_", facet.trait_acronym)) {
                return Err(structural(format!(
                    "facet {} filed under trait {}",
                    facet.acronym, facet.trait_acronym
                )));
            }
            facet_trait.push(ti);
            members[ti].push(fi);
        }
        let mut trait_facets = Vec::with_capacity(N_TRAITS);
        for (ti, m) in members.iter().enumerate() {
            let arr: [usize; FACETS_PER_TRAIT] = m.as_slice().try_into().map_err(|_| {
                structural(format!("trait {} owns {} facets", traits[ti].acronym, m.len()))
            })?;
            trait_facets.push(arr);
        }

        let mut item_facet = Vec::with_capacity(N_ITEMS);
        let mut fmembers: Vec<Vec<usize>> = vec![Vec::new(); N_FACETS];
        for (ii, item) in items.iter().enumerate() {
            let fi = *facet_pos.get(item.facet.as_str()).ok_or_else(|| {
                structural(format!("item {} references unknown facet {}", item.item_id, item.facet))
            })?;
            item_facet.push(fi);
            fmembers[fi].push(ii);
        }
        let mut facet_items = Vec::with_capacity(N_FACETS);
        for (fi, m) in fmembers.iter().enumerate() {
            let arr: [usize; ITEMS_PER_FACET] = m.as_slice().try_into().map_err(|_| {
                structural(format!("facet {} has {} items", facets[fi].acronym, m.len()))
            })?;
            facet_items.push(arr);
        }

        Ok(Self {
            items,
            facets,
            traits,
            facet_items,
            trait_facets,
            item_facet,
            facet_trait,
        })
    }

    pub fn items(&self) -> &[ItemDefinition] {
        &self.items
    }

    pub fn facets(&self) -> &[FacetDefinition] {
        &self.facets
    }

    pub fn traits(&self) -> &[TraitDefinition] {
        &self.traits
    }

    /// Item indices (not ids) belonging to a facet, in id order.
    pub fn facet_items(&self, facet: usize) -> &[usize; ITEMS_PER_FACET] {
        &self.facet_items[facet]
    }

    pub fn trait_facets(&self, trait_index: usize) -> &[usize; FACETS_PER_TRAIT] {
        &self.trait_facets[trait_index]
    }

    /// The 12 item indices under a trait, facet by facet.
    pub fn trait_items(&self, trait_index: usize) -> Vec<usize> {
        self.trait_facets[trait_index]
            .iter()
            .flat_map(|&f| self.facet_items[f])
            .collect()
    }

    pub fn item_facet(&self, item: usize) -> usize {
        self.item_facet[item]
    }

    pub fn facet_trait(&self, facet: usize) -> usize {
        self.facet_trait[facet]
    }

    pub fn facet_index(&self, acronym: &str) -> Option<usize> {
        self.facets.iter().position(|f| f.acronym == acronym)
    }

    pub fn trait_index(&self, acronym: &str) -> Option<usize> {
        self.traits.iter().position(|t| t.acronym == acronym)
    }

    /// Number of targets at a level.
    pub fn len_at(&self, level: Level) -> usize {
        match level {
            Level::Trait => N_TRAITS,
            Level::Facet => N_FACETS,
            Level::Item => N_ITEMS,
        }
    }

    pub fn targets(&self, level: Level) -> impl Iterator<Item = Target> {
        (0..self.len_at(level)).map(move |index| Target { level, index })
    }

    /// Item indices whose sentences describe a target.
    pub fn target_items(&self, target: Target) -> Vec<usize> {
        match target.level {
            Level::Trait => self.trait_items(target.index),
            Level::Facet => self.facet_items[target.index].to_vec(),
            Level::Item => vec![target.index],
        }
    }

    /// Reporting name: trait/facet acronym, or `I01`..`I60` for items.
    pub fn target_name(&self, target: Target) -> String {
        match target.level {
            Level::Trait => self.traits[target.index].acronym.clone(),
            Level::Facet => self.facets[target.index].acronym.clone(),
            Level::Item => format!("I{:02}", self.items[target.index].item_id),
        }
    }

    pub fn target_by_name(&self, name: &str) -> Option<Target> {
        if let Some(index) = self.trait_index(name) {
            return Some(Target { level: Level::Trait, index });
        }
        if let Some(index) = self.facet_index(name) {
            return Some(Target { level: Level::Facet, index });
        }
        let id: usize = name.strip_prefix('I')?.parse().ok()?;
        (1..=N_ITEMS)
            .contains(&id)
            .then_some(Target { level: Level::Item, index: id - 1 })
    }
}

/// Loads and validates a catalog JSON file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Catalog::from_json(&text)
}

/// Score of one response: unchanged, or `6 - response` for a reverse-keyed item.
pub fn item_score(response: i32, reverse_keyed: bool) -> Result<f64> {
    if !(1..=5).contains(&response) {
        return Err(Error::Validation(format!("response {response} outside 1..=5")));
    }
    let r = f64::from(response);
    Ok(if reverse_keyed { 6.0 - r } else { r })
}

/// One author's raw survey answers, `responses[id - 1]` for item `id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSheet {
    pub author_id: String,
    pub responses: Vec<i32>,
}

impl ResponseSheet {
    pub fn new(author_id: impl Into<String>, responses: Vec<i32>) -> Result<Self> {
        let sheet = Self {
            author_id: author_id.into(),
            responses,
        };
        sheet.validate()?;
        Ok(sheet)
    }

    /// Builds a sheet from `(item_id, response)` pairs in any order.
    pub fn from_pairs(
        author_id: impl Into<String>,
        pairs: impl IntoIterator<Item = (u8, i32)>,
    ) -> Result<Self> {
        let author_id = author_id.into();
        let mut slots: Vec<Option<i32>> = vec![None; N_ITEMS];
        for (id, r) in pairs {
            let slot = slots
                .get_mut(usize::from(id).wrapping_sub(1))
                .ok_or_else(|| Error::Validation(format!("{author_id}: unknown item id {id}")))?;
            if slot.replace(r).is_some() {
                return Err(Error::Validation(format!("{author_id}: item {id} answered twice")));
            }
        }
        let responses = slots
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| Error::Validation(format!("{author_id}: item {} missing", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(author_id, responses)
    }

    pub fn validate(&self) -> Result<()> {
        if self.responses.len() != N_ITEMS {
            return Err(Error::Validation(format!(
                "{}: expected {N_ITEMS} responses, found {}",
                self.author_id,
                self.responses.len()
            )));
        }
        for (i, &r) in self.responses.iter().enumerate() {
            if !(1..=5).contains(&r) {
                return Err(Error::Validation(format!(
                    "{}: item {}: response {r} outside 1..=5",
                    self.author_id,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub item_scores: Vec<f64>,
    pub facet_scores: Vec<f64>,
    pub trait_scores: Vec<f64>,
}

impl ScoreSheet {
    pub fn at(&self, target: Target) -> f64 {
        match target.level {
            Level::Trait => self.trait_scores[target.index],
            Level::Facet => self.facet_scores[target.index],
            Level::Item => self.item_scores[target.index],
        }
    }

    pub fn level(&self, level: Level) -> &[f64] {
        match level {
            Level::Trait => &self.trait_scores,
            Level::Facet => &self.facet_scores,
            Level::Item => &self.item_scores,
        }
    }
}

/// Computes item, facet and trait scores. Facets average their items and
/// traits average their facets, summing in catalog order.
pub fn score_sheet(responses: &ResponseSheet, catalog: &Catalog) -> Result<ScoreSheet> {
    if responses.responses.len() != N_ITEMS {
        return Err(Error::Validation(format!(
            "{}: expected {N_ITEMS} responses, found {}",
            responses.author_id,
            responses.responses.len()
        )));
    }
    let item_scores = catalog
        .items()
        .iter()
        .zip(&responses.responses)
        .map(|(item, &r)| {
            item.score(r)
                .map_err(|e| Error::Validation(format!("{}: {e}", responses.author_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(derive_from_items(item_scores, catalog))
}

/// Completes a score sheet from item-level values by the averaging rules.
pub fn derive_from_items(item_scores: Vec<f64>, catalog: &Catalog) -> ScoreSheet {
    let facet_scores: Vec<f64> = (0..N_FACETS)
        .map(|f| mean(catalog.facet_items(f).iter().map(|&i| item_scores[i])))
        .collect();
    let trait_scores = derive_traits(&facet_scores, catalog);
    ScoreSheet {
        item_scores,
        facet_scores,
        trait_scores,
    }
}

pub fn derive_traits(facet_scores: &[f64], catalog: &Catalog) -> Vec<f64> {
    (0..N_TRAITS)
        .map(|t| mean(catalog.trait_facets(t).iter().map(|&f| facet_scores[f])))
        .collect()
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}
