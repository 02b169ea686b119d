//! Taxonomy construction: isA triple extraction, concept popularity
//! statistics and concept vocabulary selection.

mod extract;
pub mod io;
mod select;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extract::{extract_isa_triples, human_subjects, ExtractReport, HUMAN_SENTINEL};
pub use select::{
    select_concepts, word_filter_check, Concept, ConceptVocab, SelectionConfig, WordFilter,
    WordFilterMode,
};
pub use stats::{build_stats, compute_mfe, ConceptStats};

/// The properties accepted as isA relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IsAProperty {
    /// instance of
    P31,
    /// subclass of
    P279,
    /// genre
    P136,
    /// occupation
    P106,
    /// form of creative work
    P7736,
}

impl IsAProperty {
    pub const ALL: [IsAProperty; 5] = [
        IsAProperty::P31,
        IsAProperty::P279,
        IsAProperty::P136,
        IsAProperty::P106,
        IsAProperty::P7736,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "P31" => IsAProperty::P31,
            "P279" => IsAProperty::P279,
            "P136" => IsAProperty::P136,
            "P106" => IsAProperty::P106,
            "P7736" => IsAProperty::P7736,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IsAProperty::P31 => "P31",
            IsAProperty::P279 => "P279",
            IsAProperty::P136 => "P136",
            IsAProperty::P106 => "P106",
            IsAProperty::P7736 => "P7736",
        }
    }
}

impl fmt::Display for IsAProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IsATriple {
    pub entity: String,
    pub property: IsAProperty,
    pub concept: String,
}

impl IsATriple {
    pub fn new(entity: &str, property: IsAProperty, concept: &str) -> Result<Self> {
        if entity == concept {
            return Err(Error::arg(format!("reflexive isA triple on {entity}")));
        }
        Ok(Self {
            entity: entity.to_string(),
            property,
            concept: concept.to_string(),
        })
    }
}

/// Entity to concept membership.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Taxonomy {
    entities: BTreeSet<String>,
    concepts: BTreeSet<String>,
    membership: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a IsATriple>) -> Self {
        Self::from_pairs(
            triples
                .into_iter()
                .map(|t| (t.entity.as_str(), t.concept.as_str())),
        )
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut tax = Taxonomy::default();
        for (e, c) in pairs {
            tax.insert(e, c);
        }
        tax
    }

    pub fn insert(&mut self, entity: &str, concept: &str) {
        self.entities.insert(entity.to_string());
        self.concepts.insert(concept.to_string());
        self.membership
            .entry(entity.to_string())
            .or_default()
            .insert(concept.to_string());
    }

    pub fn entities(&self) -> &BTreeSet<String> {
        &self.entities
    }

    pub fn concepts(&self) -> &BTreeSet<String> {
        &self.concepts
    }

    pub fn concepts_of(&self, entity: &str) -> Option<&BTreeSet<String>> {
        self.membership.get(entity)
    }

    pub fn membership(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.membership.iter().map(|(e, cs)| (e.as_str(), cs))
    }

    /// Entities grouped by concept.
    pub fn members(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (e, cs) in &self.membership {
            for c in cs {
                out.entry(c.as_str()).or_default().push(e.as_str());
            }
        }
        out
    }

    /// Rewrites memberships through a concept merge map (source to target).
    pub fn remap(&self, merge: &BTreeMap<String, String>) -> Taxonomy {
        let mut out = Taxonomy::default();
        for (e, cs) in &self.membership {
            for c in cs {
                let target = merge.get(c).unwrap_or(c);
                out.insert(e, target);
            }
        }
        out
    }

    pub fn num_pairs(&self) -> usize {
        self.membership.values().map(BTreeSet::len).sum()
    }
}

/// Multi-hot concept target for one entity over a [`ConceptVocab`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptTarget {
    pub hot: Vec<bool>,
    /// Set when the entity has no concept in the vocabulary (absent from the
    /// taxonomy or all its concepts filtered out).
    pub unknown: bool,
}

impl ConceptTarget {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.hot
            .iter()
            .enumerate()
            .filter_map(|(k, &h)| h.then_some(k))
    }

    /// Whether this target may supervise the concept objective.
    pub fn is_valid(&self) -> bool {
        !self.unknown && self.hot.iter().any(|&h| h)
    }
}

pub fn lookup_concepts(taxonomy: &Taxonomy, entity: &str, vocab: &ConceptVocab) -> ConceptTarget {
    let mut hot = vec![false; vocab.len()];
    if let Some(cs) = taxonomy.concepts_of(entity) {
        for c in cs {
            if let Some(k) = vocab.position(c) {
                hot[k] = true;
            }
        }
    }
    let unknown = !hot.iter().any(|&h| h);
    ConceptTarget { hot, unknown }
}
