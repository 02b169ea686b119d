//! Dataset schemas for the downstream tasks.
//!
//! Typing and relation data are JSON Lines with character offsets (Unicode
//! scalar values, end exclusive). Knowledge graphs are TSV triples plus a
//! `id<TAB>name` table covering entities and relations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::io::{read_text, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// `{"id", "text", "span": {"start", "end"}, "labels": [..]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypingRecord {
    pub id: String,
    pub text: String,
    pub span: CharSpan,
    pub labels: Vec<String>,
}

/// `{"id", "text", "head": {..}, "tail": {..}, "relation"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub id: String,
    pub text: String,
    pub head: CharSpan,
    pub tail: CharSpan,
    pub relation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KGTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl KGTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

pub type NameTable = BTreeMap<String, String>;

pub fn name_of<'a>(names: &'a NameTable, id: &str) -> Result<&'a str> {
    names
        .get(id)
        .map(String::as_str)
        .filter(|n| !n.trim().is_empty())
        .ok_or_else(|| Error::data(id.to_string(), "no name for this id"))
}

pub fn read_triples(path: &Path) -> Result<Vec<KGTriple>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::data(
                format!("{}:{}", path.display(), i + 1),
                "expected head<TAB>relation<TAB>tail",
            ));
        }
        out.push(KGTriple::new(cols[0], cols[1], cols[2]));
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[KGTriple]) -> Result<()> {
    let mut body = String::new();
    for t in triples {
        writeln!(body, "{}\t{}\t{}", t.head, t.relation, t.tail).unwrap();
    }
    write_text(path, &body)
}

pub fn read_names(path: &Path) -> Result<NameTable> {
    let text = read_text(path)?;
    let mut out = NameTable::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, name)) = line.split_once('\t') else {
            return Err(Error::data(format!("{}:{}", path.display(), i + 1), "expected id<TAB>name"));
        };
        out.insert(id.to_string(), name.to_string());
    }
    Ok(out)
}

pub fn write_names(path: &Path, names: &NameTable) -> Result<()> {
    let mut body = String::new();
    for (id, name) in names {
        writeln!(body, "{id}\t{name}").unwrap();
    }
    write_text(path, &body)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Train, dev and test partitions of one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for Splits<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> Splits<T> {
    pub fn sizes(&self) -> SplitCounts {
        SplitCounts {
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &T> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}
