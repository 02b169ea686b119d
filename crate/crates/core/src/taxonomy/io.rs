//! File formats: TSV tables, id lists and the concept vocab JSON.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Concept, ConceptStats, ConceptVocab, Taxonomy};
use crate::error::{Error, Result};

pub const VOCAB_FORMAT_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn loc(path: &Path, line: usize) -> String {
    format!("{}:{}", path.display(), line + 1)
}

/// Non-empty lines split on tabs, with their zero-based line numbers.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches('\r');
        (!l.trim().is_empty() && !l.starts_with('#')).then(|| (i, l.split('\t').collect()))
    })
}

fn parse_count(path: &Path, i: usize, s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::data(loc(path, i), format!("bad count {s:?}")))
}

/// `id<TAB>count` rows.
pub fn read_counts(path: &Path) -> Result<HashMap<String, u64>> {
    let text = read_text(path)?;
    let mut out = HashMap::new();
    for (i, cols) in rows(&text) {
        if cols.len() != 2 {
            return Err(Error::data(loc(path, i), "expected 2 columns"));
        }
        *out.entry(cols[0].to_string()).or_insert(0) += parse_count(path, i, cols[1])?;
    }
    Ok(out)
}

pub fn write_counts<'a>(path: &Path, counts: impl IntoIterator<Item = (&'a str, u64)>) -> Result<()> {
    let mut body = String::new();
    for (k, n) in counts {
        writeln!(body, "{k}\t{n}").unwrap();
    }
    write_text(path, &body)
}

/// `id<TAB>label` rows.
pub fn read_labels(path: &Path) -> Result<HashMap<String, String>> {
    let text = read_text(path)?;
    let mut out = HashMap::new();
    for (i, cols) in rows(&text) {
        if cols.len() != 2 || cols[1].trim().is_empty() {
            return Err(Error::data(loc(path, i), "expected id<TAB>label"));
        }
        out.insert(cols[0].to_string(), cols[1].trim().to_string());
    }
    Ok(out)
}

/// One id per line.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// `source<TAB>target` rows.
pub fn read_merge(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (i, cols) in rows(&text) {
        if cols.len() != 2 {
            return Err(Error::data(loc(path, i), "expected source<TAB>target"));
        }
        if out.insert(cols[0].to_string(), cols[1].to_string()).is_some() {
            return Err(Error::data(loc(path, i), format!("{} merged twice", cols[0])));
        }
    }
    Ok(out)
}

/// `concept_id<TAB>label<TAB>mfe<TAB>sfc` rows.
pub fn write_stats(path: &Path, stats: &[ConceptStats]) -> Result<()> {
    let mut body = String::new();
    for s in stats {
        writeln!(body, "{}\t{}\t{}\t{}", s.concept_id, s.label, s.mfe, s.sfc).unwrap();
    }
    write_text(path, &body)
}

pub fn read_stats(path: &Path) -> Result<Vec<ConceptStats>> {
    let text = read_text(path)?;
    rows(&text)
        .map(|(i, cols)| {
            if cols.len() != 4 {
                return Err(Error::data(loc(path, i), "expected 4 columns"));
            }
            Ok(ConceptStats {
                concept_id: cols[0].to_string(),
                label: cols[1].to_string(),
                mfe: parse_count(path, i, cols[2])?,
                sfc: parse_count(path, i, cols[3])?,
            })
        })
        .collect()
}

/// Membership as `entity_id<TAB>concept_id` rows.
pub fn write_taxonomy(path: &Path, taxonomy: &Taxonomy) -> Result<()> {
    let mut body = String::new();
    for (e, cs) in taxonomy.membership() {
        for c in cs {
            writeln!(body, "{e}\t{c}").unwrap();
        }
    }
    write_text(path, &body)
}

pub fn read_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = read_text(path)?;
    let mut tax = Taxonomy::default();
    for (i, cols) in rows(&text) {
        if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::data(loc(path, i), "expected entity<TAB>concept"));
        }
        if cols[0] == cols[1] {
            return Err(Error::data(loc(path, i), "reflexive membership"));
        }
        tax.insert(cols[0], cols[1]);
    }
    Ok(tax)
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    concepts: Vec<Concept>,
}

pub fn vocab_to_json(vocab: &ConceptVocab) -> String {
    serde_json::to_string_pretty(&VocabFile {
        version: VOCAB_FORMAT_VERSION,
        concepts: vocab.concepts().to_vec(),
    })
    .expect("vocab serializes")
}

pub fn vocab_from_json(text: &str, location: &str) -> Result<ConceptVocab> {
    let file: VocabFile = serde_json::from_str(text).map_err(|e| Error::json(location, e))?;
    if file.version != VOCAB_FORMAT_VERSION {
        return Err(Error::data(location, format!("unsupported vocab version {}", file.version)));
    }
    let ordered = file.concepts.windows(2).all(|w| w[0].id < w[1].id);
    if !ordered {
        return Err(Error::data(location, "concepts not in vocab order"));
    }
    ConceptVocab::new(file.concepts)
}

pub fn write_vocab(path: &Path, vocab: &ConceptVocab) -> Result<()> {
    write_text(path, &vocab_to_json(vocab))
}

pub fn read_vocab(path: &Path) -> Result<ConceptVocab> {
    vocab_from_json(&read_text(path)?, &path.display().to_string())
}
