use std::collections::HashSet;

use serde::Serialize;

use super::{IsAProperty, IsATriple};

/// Default object of the instance-of triple that marks a human subject.
pub const HUMAN_SENTINEL: &str = "Q5";

/// Skip counts from one extraction pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtractReport {
    pub records: u64,
    pub kept: u64,
    pub malformed: u64,
    pub reflexive: u64,
    pub not_isa: u64,
    pub outside_entity_set: u64,
    pub human_genre: u64,
    pub duplicates: u64,
}

fn parse_record(line: &str) -> Option<(&str, &str, &str)> {
    let mut cols = line.trim_end_matches(['\r', '\n']).split('\t');
    let s = cols.next()?.trim();
    let p = cols.next()?.trim();
    let o = cols.next()?.trim();
    if cols.next().is_some() || s.is_empty() || p.is_empty() || o.is_empty() {
        return None;
    }
    Some((s, p, o))
}

/// First pass: subjects that are instances of `sentinel`.
pub fn human_subjects<I, S>(lines: I, sentinel: &str) -> HashSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    lines
        .into_iter()
        .filter_map(|l| {
            let (s, p, o) = parse_record(l.as_ref())?;
            (p == "P31" && o == sentinel).then(|| s.to_string())
        })
        .collect()
}

/// Second pass: keeps whitelisted isA triples whose subject is in
/// `entities`, dropping genre triples of human subjects. Input order is
/// preserved and repeated triples are kept once.
pub fn extract_isa_triples<I, S>(
    lines: I,
    entities: &HashSet<String>,
    humans: &HashSet<String>,
) -> (Vec<IsATriple>, ExtractReport)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = ExtractReport::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in lines {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let Some((s, p, o)) = parse_record(line) else {
            report.malformed += 1;
            continue;
        };
        let Some(property) = IsAProperty::parse(p) else {
            report.not_isa += 1;
            continue;
        };
        if s == o {
            report.reflexive += 1;
            continue;
        }
        if !entities.contains(s) {
            report.outside_entity_set += 1;
            continue;
        }
        if property == IsAProperty::P136 && humans.contains(s) {
            report.human_genre += 1;
            continue;
        }
        let triple = IsATriple {
            entity: s.to_string(),
            property,
            concept: o.to_string(),
        };
        if seen.insert(triple.clone()) {
            report.kept += 1;
            out.push(triple);
        } else {
            report.duplicates += 1;
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(xs: &[&str]) -> HashSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn whitelist_and_human_genre_rules() {
        let lines = [
            "e1\tP31\tc1",
            "e1\tP50\tc1",
            "h1\tP31\tQ5",
            "h1\tP136\tg1",
            "h1\tP106\tphilosopher",
            "x9\tP31\tc1",
            "broken line",
            "e1\tP31\te1",
        ];
        let humans = human_subjects(lines, HUMAN_SENTINEL);
        assert_eq!(humans, set(&["h1"]));
        let (out, rep) = extract_isa_triples(lines, &set(&["e1", "h1"]), &humans);
        let got: Vec<_> = out
            .iter()
            .map(|t| (t.entity.as_str(), t.property, t.concept.as_str()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("e1", IsAProperty::P31, "c1"),
                ("h1", IsAProperty::P31, "Q5"),
                ("h1", IsAProperty::P106, "philosopher"),
            ]
        );
        assert_eq!(rep.not_isa, 1);
        assert_eq!(rep.human_genre, 1);
        assert_eq!(rep.outside_entity_set, 1);
        assert_eq!(rep.malformed, 1);
        assert_eq!(rep.reflexive, 1);
        assert_eq!(rep.records, 8);
    }

    #[test]
    fn custom_human_sentinel() {
        let lines = ["h\tP31\tPERSON", "h\tP136\tg"];
        let humans = human_subjects(lines, "PERSON");
        let (out, _) = extract_isa_triples(lines, &set(&["h"]), &humans);
        assert_eq!(out.len(), 1);
    }

    proptest! {
        #[test]
        fn invariant_under_duplication(
            recs in prop::collection::vec((0u8..6, 0usize..7, 0u8..6), 0..40),
            dup in 1usize..4,
        ) {
            let props = ["P31", "P279", "P136", "P106", "P7736", "P50", "P17"];
            let lines: Vec<String> = recs
                .iter()
                .map(|(s, p, o)| format!("e{s}\t{}\tc{o}", props[*p]))
                .collect();
            let entities: HashSet<String> = (0..4).map(|i| format!("e{i}")).collect();
            let humans = set(&["e1"]);
            let (once, _) = extract_isa_triples(&lines, &entities, &humans);
            let repeated: Vec<&String> = lines.iter().flat_map(|l| std::iter::repeat_n(l, dup)).collect();
            let (many, _) = extract_isa_triples(repeated, &entities, &humans);
            prop_assert_eq!(once, many);
        }
    }
}
