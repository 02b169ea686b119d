//! Dataset builders: frequent-label removal for fine-grained typing and
//! support/query group mining for concept-based knowledge transfer.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{KGTriple, SplitCounts, Splits, TypingRecord};
use crate::seed::Rng;
use crate::taxonomy::Taxonomy;

pub const FIGER_FINER_THRESHOLD: usize = 10_000;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FinerReport {
    pub threshold: usize,
    /// Removed labels with their training frequency.
    pub removed_labels: BTreeMap<String, usize>,
    pub dropped: SplitCounts,
    pub kept: SplitCounts,
}

/// Removes every label seen more than `threshold` times in the training
/// split from all splits, then drops samples left without labels.
pub fn build_figer_finer(splits: &Splits<TypingRecord>, threshold: usize) -> (Splits<TypingRecord>, FinerReport) {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &splits.train {
        let distinct: BTreeSet<&str> = r.labels.iter().map(String::as_str).collect();
        for l in distinct {
            *freq.entry(l).or_default() += 1;
        }
    }
    let removed: BTreeMap<String, usize> = freq
        .iter()
        .filter(|(_, &n)| n > threshold)
        .map(|(l, &n)| (l.to_string(), n))
        .collect();
    let filter = |records: &[TypingRecord]| -> (Vec<TypingRecord>, usize) {
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            let labels: Vec<String> = r.labels.iter().filter(|l| !removed.contains_key(*l)).cloned().collect();
            if !labels.is_empty() {
                kept.push(TypingRecord { labels, ..r.clone() });
            }
        }
        let dropped = records.len() - kept.len();
        (kept, dropped)
    };
    let (train, dt) = filter(&splits.train);
    let (dev, dd) = filter(&splits.dev);
    let (test, ds) = filter(&splits.test);
    let out = Splits { train, dev, test };
    let report = FinerReport {
        threshold,
        removed_labels: removed,
        dropped: SplitCounts { train: dt, dev: dd, test: ds },
        kept: out.sizes(),
    };
    (out, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Head,
    Tail,
}

impl Slot {
    pub fn differential(self, t: &KGTriple) -> &str {
        match self {
            Slot::Head => &t.head,
            Slot::Tail => &t.tail,
        }
    }

    pub fn fixed(self, t: &KGTriple) -> &str {
        match self {
            Slot::Head => &t.tail,
            Slot::Tail => &t.head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CktGroup {
    pub support: KGTriple,
    pub query_dev: KGTriple,
    pub query_test: KGTriple,
    pub slot: Slot,
    pub shared_concepts: Vec<String>,
}

impl CktGroup {
    pub fn triples(&self) -> [&KGTriple; 3] {
        [&self.support, &self.query_dev, &self.query_test]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CktOutput {
    pub splits: Splits<KGTriple>,
    pub groups: Vec<CktGroup>,
    /// Groups requested but not found.
    pub shortfall: usize,
}

fn shared<'a>(taxonomy: &'a Taxonomy, entities: &[&str]) -> BTreeSet<&'a String> {
    let mut sets = entities.iter().map(|e| taxonomy.concepts_of(e));
    let Some(Some(first)) = sets.next() else {
        return BTreeSet::new();
    };
    let mut acc: BTreeSet<&String> = first.iter().collect();
    for s in sets {
        match s {
            Some(s) => acc.retain(|c| s.contains(*c)),
            None => return BTreeSet::new(),
        }
    }
    acc
}

/// Greedy group mining. Triples sharing relation and fixed entity form a
/// pool; each group takes one support and two queries from a pool whose
/// differential entities share a concept. No triple is used twice. An entity in any support fact is
/// never a query differential, and a query differential never enters a
/// later support fact.
pub fn build_ckt_splits(kg: &[KGTriple], taxonomy: &Taxonomy, n_groups: usize, rng: &mut Rng) -> CktOutput {
    let mut pools: BTreeMap<(Slot, &str, &str), BTreeSet<&str>> = BTreeMap::new();
    for t in kg {
        for slot in [Slot::Head, Slot::Tail] {
            if slot.differential(t) != slot.fixed(t) {
                pools
                    .entry((slot, t.relation.as_str(), slot.fixed(t)))
                    .or_default()
                    .insert(slot.differential(t));
            }
        }
    }
    let mut keys: Vec<_> = pools.keys().copied().filter(|k| pools[k].len() >= 3).collect();
    keys.shuffle(rng);
    let mut in_support: BTreeSet<&str> = BTreeSet::new();
    let mut as_query: BTreeSet<&str> = BTreeSet::new();
    let mut used: BTreeSet<KGTriple> = BTreeSet::new();
    let mut groups = Vec::new();
    let make = |slot: Slot, rel: &str, fixed: &str, e: &str| match slot {
        Slot::Head => KGTriple::new(e, rel, fixed),
        Slot::Tail => KGTriple::new(fixed, rel, e),
    };
    'keys: for key @ (slot, rel, fixed) in keys {
        let mut pool: Vec<&str> = pools[&key].iter().copied().collect();
        pool.shuffle(rng);
        let mut tried: BTreeSet<&str> = BTreeSet::new();
        loop {
            if groups.len() >= n_groups {
                break 'keys;
            }
            if as_query.contains(fixed) {
                continue 'keys;
            }
            let Some(&s) = pool.iter().find(|e| {
                !tried.contains(*e)
                    && !as_query.contains(*e)
                    && taxonomy.concepts_of(e).is_some()
                    && !used.contains(&make(slot, rel, fixed, e))
            }) else {
                continue 'keys;
            };
            tried.insert(s);
            let query_ok =
                |e: &&str| !in_support.contains(e) && *e != s && *e != fixed && !used.contains(&make(slot, rel, fixed, e));
            let mut found = None;
            'pairs: for (a, &q1) in pool.iter().enumerate() {
                if !query_ok(&q1) || shared(taxonomy, &[s, q1]).is_empty() {
                    continue;
                }
                for (b, &q2) in pool.iter().enumerate().skip(a + 1) {
                    if query_ok(&q2) {
                        let common = shared(taxonomy, &[s, q1, q2]);
                        if !common.is_empty() {
                            found = Some((a, b, common.into_iter().cloned().collect::<Vec<_>>()));
                            break 'pairs;
                        }
                    }
                }
            }
            let Some((a, b, concepts)) = found else {
                continue;
            };
            let (q1, q2) = (pool[a], pool[b]);
            pool.retain(|e| ![s, q1, q2].contains(e));
            in_support.insert(s);
            in_support.insert(fixed);
            as_query.insert(q1);
            as_query.insert(q2);
            let group = CktGroup {
                support: make(slot, rel, fixed, s),
                query_dev: make(slot, rel, fixed, q1),
                query_test: make(slot, rel, fixed, q2),
                slot,
                shared_concepts: concepts,
            };
            used.extend(group.triples().into_iter().cloned());
            groups.push(group);
        }
    }
    let shortfall = n_groups - groups.len();
    if shortfall > 0 {
        log::warn!("only {} of {n_groups} transfer groups found", groups.len());
    }
    CktOutput {
        splits: Splits {
            train: groups.iter().map(|g| g.support.clone()).collect(),
            dev: groups.iter().map(|g| g.query_dev.clone()).collect(),
            test: groups.iter().map(|g| g.query_test.clone()).collect(),
        },
        groups,
        shortfall,
    }
}

/// Every violated group invariant, as messages naming the group index.
pub fn ckt_violations(groups: &[CktGroup], taxonomy: &Taxonomy) -> Vec<String> {
    let mut out = Vec::new();
    let support_entities: BTreeSet<&str> = groups
        .iter()
        .flat_map(|g| [g.support.head.as_str(), g.support.tail.as_str()])
        .collect();
    for (i, g) in groups.iter().enumerate() {
        let [s, d, t] = g.triples();
        let same_rest = [d, t]
            .iter()
            .all(|q| q.relation == s.relation && g.slot.fixed(q) == g.slot.fixed(s));
        let diffs = [g.slot.differential(s), g.slot.differential(d), g.slot.differential(t)];
        if !same_rest || diffs[0] == diffs[1] || diffs[0] == diffs[2] || diffs[1] == diffs[2] {
            out.push(format!("group {i}: triples differ outside the {:?} slot", g.slot));
        }
        let common = shared(taxonomy, &diffs);
        if common.is_empty() || g.shared_concepts.iter().any(|c| !common.contains(c)) {
            out.push(format!("group {i}: differential entities share no listed concept"));
        }
        for q in &diffs[1..] {
            if support_entities.contains(q) {
                out.push(format!("group {i}: query entity {q} appears in a support fact"));
            }
        }
    }
    out
}
