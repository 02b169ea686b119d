use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::Taxonomy;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptStats {
    pub concept_id: String,
    pub label: String,
    /// Mentioning frequency of the concept's entities.
    pub mfe: u64,
    /// Searching frequency of the concept.
    pub sfc: u64,
}

/// Sums entity mention counts into every concept the entity belongs to.
/// Entities missing from `mention_counts` count as zero; every concept of the
/// taxonomy appears in the result.
pub fn compute_mfe(taxonomy: &Taxonomy, mention_counts: &HashMap<String, u64>) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = taxonomy.concepts().iter().map(|c| (c.clone(), 0)).collect();
    for (entity, concepts) in taxonomy.membership() {
        let n = mention_counts.get(entity).copied().unwrap_or(0);
        if n == 0 {
            continue;
        }
        for c in concepts {
            *out.get_mut(c).expect("membership concept is registered") += n;
        }
    }
    out
}

/// Joins MFE, SFC and labels into one row per taxonomy concept, ordered by id.
/// A concept without a label uses its id.
pub fn build_stats(
    taxonomy: &Taxonomy,
    mfe: &BTreeMap<String, u64>,
    sfc: &HashMap<String, u64>,
    labels: &HashMap<String, String>,
) -> Vec<ConceptStats> {
    taxonomy
        .concepts()
        .iter()
        .map(|c| ConceptStats {
            concept_id: c.clone(),
            label: labels.get(c).cloned().unwrap_or_else(|| c.clone()),
            mfe: mfe.get(c).copied().unwrap_or(0),
            sfc: sfc.get(c).copied().unwrap_or(0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(xs: &[(&str, u64)]) -> HashMap<String, u64> {
        xs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn sums_entity_counts() {
        let tax = Taxonomy::from_pairs([("e1", "c"), ("e2", "c"), ("e3", "d")]);
        let mfe = compute_mfe(&tax, &counts(&[("e1", 100), ("e2", 50)]));
        assert_eq!(mfe["c"], 150);
        assert_eq!(mfe["d"], 0);
    }

    #[test]
    fn shared_entity_counts_for_both() {
        let pairs = [("e1", "a"), ("e1", "b"), ("e2", "b"), ("e3", "a")];
        let tax = Taxonomy::from_pairs(pairs);
        let mc = counts(&[("e1", 7), ("e2", 11), ("e3", 13), ("stray", 99)]);
        let mfe = compute_mfe(&tax, &mc);
        // brute-force: rescan the membership table per concept
        for concept in ["a", "b"] {
            let want: u64 = pairs
                .iter()
                .filter(|(_, c)| *c == concept)
                .map(|(e, _)| mc[*e])
                .sum();
            assert_eq!(mfe[concept], want);
        }
        assert_eq!(mfe["a"], 20);
        assert_eq!(mfe["b"], 18);
    }

    #[test]
    fn labels_default_to_ids() {
        let tax = Taxonomy::from_pairs([("e", "c1")]);
        let mfe = compute_mfe(&tax, &counts(&[("e", 3)]));
        let stats = build_stats(&tax, &mfe, &HashMap::new(), &HashMap::new());
        assert_eq!(stats[0].label, "c1");
        assert_eq!(stats[0].mfe, 3);
    }

    proptest! {
        #[test]
        fn sharded_counting_matches_single_pass(
            pairs in prop::collection::vec((0u8..12, 0u8..5), 1..40),
            cnt in prop::collection::vec(0u64..1000, 12),
            cut in prop::collection::vec(0usize..3, 12),
        ) {
            let pairs: Vec<(String, String)> = pairs.iter().map(|(e, c)| (format!("e{e}"), format!("c{c}"))).collect();
            let tax = Taxonomy::from_pairs(pairs.iter().map(|(e, c)| (e.as_str(), c.as_str())));
            let full: HashMap<String, u64> = (0..12).map(|i| (format!("e{i}"), cnt[i])).collect();
            let whole = compute_mfe(&tax, &full);
            let mut merged: BTreeMap<String, u64> = BTreeMap::new();
            for shard in 0..3 {
                let part: HashMap<String, u64> = (0..12).filter(|i| cut[*i] == shard).map(|i| (format!("e{i}"), cnt[i])).collect();
                for (c, n) in compute_mfe(&tax, &part) {
                    *merged.entry(c).or_default() += n;
                }
            }
            prop_assert_eq!(whole, merged);
        }
    }
}
