use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ConceptStats;
use crate::error::{Error, Result};
use crate::tokenizer::WordPiece;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub label: String,
}

impl Concept {
    pub fn new(id: &str, label: &str) -> Self {
        Self {
            id: id.to_string(),
            label: label.to_string(),
        }
    }
}

/// Ordered concept label space. Concepts are kept sorted by id so the
/// position of a concept never depends on input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptVocab {
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
}

impl ConceptVocab {
    pub fn new(mut concepts: Vec<Concept>) -> Result<Self> {
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = concepts.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::data("concept vocab", format!("duplicate concept id {}", w[0].id)));
        }
        let index = concepts
            .iter()
            .enumerate()
            .map(|(k, c)| (c.id.clone(), k))
            .collect();
        Ok(Self { concepts, index })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, k: usize) -> Option<&Concept> {
        self.concepts.get(k)
    }

    pub fn ids(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.id.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordFilterMode {
    /// One whitespace-delimited word.
    #[default]
    Word,
    /// One token of the model tokenizer.
    Token,
}

#[derive(Clone, Copy, Debug)]
pub enum WordFilter<'a> {
    Word,
    Token(&'a WordPiece),
}

impl WordFilter<'_> {
    pub fn mode(&self) -> WordFilterMode {
        match self {
            WordFilter::Word => WordFilterMode::Word,
            WordFilter::Token(_) => WordFilterMode::Token,
        }
    }
}

/// Whether a concept label can be referred to by an individual word.
pub fn word_filter_check(label: &str, filter: &WordFilter<'_>) -> Result<bool> {
    let label = label.trim();
    if label.is_empty() {
        return Err(Error::arg("empty concept label"));
    }
    Ok(match filter {
        WordFilter::Word => !label.chars().any(char::is_whitespace),
        WordFilter::Token(tok) => tok.encode(label).len() == 1,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionConfig {
    pub mfe_hi: u64,
    pub mfe_lo: u64,
    pub sfc_min: u64,
    pub allow: BTreeSet<String>,
    pub deny: BTreeSet<String>,
    /// Source concept to the concept that absorbs it.
    pub merge: BTreeMap<String, String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mfe_hi: 100_000,
            mfe_lo: 10_000,
            sfc_min: 1_000_000,
            allow: BTreeSet::new(),
            deny: BTreeSet::new(),
            merge: BTreeMap::new(),
        }
    }
}

impl SelectionConfig {
    fn popular(&self, s: &ConceptStats) -> bool {
        s.mfe > self.mfe_hi || (s.mfe > self.mfe_lo && s.sfc > self.sfc_min)
    }

    fn validate(&self) -> Result<()> {
        let both: Vec<_> = self.allow.intersection(&self.deny).cloned().collect();
        if !both.is_empty() {
            return Err(Error::Config(format!(
                "concepts both allowed and denied: {}",
                both.join(", ")
            )));
        }
        for start in self.merge.keys() {
            let mut visited = vec![start.as_str()];
            let mut cur = start.as_str();
            while let Some(next) = self.merge.get(cur) {
                if visited.contains(&next.as_str()) {
                    visited.push(next);
                    return Err(Error::Config(format!("merge cycle: {}", visited.join(" -> "))));
                }
                visited.push(next);
                cur = next;
            }
        }
        Ok(())
    }
}

/// Selects popular single-word concepts.
///
/// A concept survives when its MFE exceeds `mfe_hi`, or its MFE exceeds
/// `mfe_lo` and its SFC exceeds `sfc_min`, and its label passes the word
/// filter. Denied concepts never survive; allowed concepts always do. Merge
/// sources are then removed and must point at surviving concepts.
pub fn select_concepts(
    stats: &[ConceptStats],
    config: &SelectionConfig,
    filter: &WordFilter<'_>,
) -> Result<ConceptVocab> {
    config.validate()?;
    let mut survivors: Vec<&ConceptStats> = Vec::new();
    let mut seen = HashSet::new();
    for s in stats {
        if !seen.insert(s.concept_id.as_str()) {
            return Err(Error::data("concept stats", format!("duplicate concept {}", s.concept_id)));
        }
        let keep = if config.deny.contains(&s.concept_id) {
            false
        } else if config.allow.contains(&s.concept_id) {
            true
        } else {
            config.popular(s)
                && word_filter_check(&s.label, filter)
                    .map_err(|_| Error::data(format!("concept {}", s.concept_id), "empty label"))?
        };
        if keep {
            survivors.push(s);
        }
    }
    let surviving: HashSet<&str> = survivors.iter().map(|s| s.concept_id.as_str()).collect();
    for (source, target) in &config.merge {
        if !surviving.contains(target.as_str()) || config.merge.contains_key(target) {
            return Err(Error::Config(format!(
                "merge {source} -> {target}: target does not survive selection"
            )));
        }
    }
    ConceptVocab::new(
        survivors
            .into_iter()
            .filter(|s| !config.merge.contains_key(&s.concept_id))
            .map(|s| Concept::new(&s.concept_id, &s.label))
            .collect(),
    )
}
