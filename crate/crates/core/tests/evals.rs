mod common;

use std::collections::{BTreeMap, BTreeSet};

use concept_core::evals::builders::{build_ckt_splits, build_figer_finer, ckt_violations, Slot};
use concept_core::evals::data::{CharSpan, KGTriple, NameTable, RelationRecord, Splits, TypingRecord};
use concept_core::evals::finetune::FineTuneConfig;
use concept_core::evals::kgc::{
    both_directions, filtered_ranks, kg_entities, lp_candidate, lp_query, lp_scores, triple_classification,
    AnswerIndex, Direction,
};
use concept_core::evals::metrics::{filtered_rank, random_hits_at_10, ranking_metrics, remaining_candidates};
use concept_core::evals::{finetune_entity_typing, finetune_relation_classification, rc_metrics, typing_metrics, RcMode};
use concept_core::model::{ConceptModel, Encoder};
use concept_core::seed;
use concept_core::taxonomy::Taxonomy;
use concept_core::tokenizer::toy;
use num_rational::Ratio;
use proptest::prelude::*;

use common::oracles::{self, bits_to_set, Q};
use common::small_config;

fn encoder(seed: u64) -> Encoder<f32> {
    let mut cfg = small_config(toy().len());
    cfg.hidden = 32;
    cfg.intermediate = 64;
    cfg.dropout = 0.0;
    ConceptModel::<f32>::new(&cfg, 1, seed).unwrap().encoder
}

fn ft(epochs: usize) -> FineTuneConfig {
    FineTuneConfig {
        lr: 1e-3,
        batch_size: 4,
        epochs,
        max_len: 32,
        weight_decay: 0.0,
        ..Default::default()
    }
}

fn instance(labels: u32) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    let mask = (1u16 << labels) as u8 - 1;
    (1usize..12).prop_flat_map(move |n| {
        (
            proptest::collection::vec(any::<u8>().prop_map(move |b| b & mask), n),
            proptest::collection::vec((1u8..=mask).prop_map(move |b| b & mask), n),
        )
    })
}

proptest! {
    #[test]
    fn typing_metrics_match_the_oracle((preds, golds) in instance(4)) {
        let p: Vec<_> = preds.iter().map(|&b| bits_to_set(b)).collect();
        let g: Vec<_> = golds.iter().map(|&b| bits_to_set(b)).collect();
        let m = typing_metrics::<Q, u32>(&p, &g, &[0, 1, 2, 3]).unwrap();
        let want = oracles::typing(&preds, &golds, 4);
        prop_assert_eq!(
            [m.strict_acc, m.loose_macro_f1, m.loose_micro_f1, m.type_macro_f1, m.loose_macro_precision, m.loose_macro_recall],
            want
        );
    }

    #[test]
    fn relation_metrics_match_the_oracle(pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..20)) {
        let (p, g): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let m = rc_metrics::<Q, u8>(&p, &g, &0).unwrap();
        prop_assert_eq!([m.precision, m.recall, m.micro_f1], oracles::relation(&p, &g));
    }

    #[test]
    fn ranks_match_the_oracle(
        scores in proptest::collection::vec(-3i32..4, 1..15),
        gold_seed in any::<usize>(),
        mask in proptest::collection::vec(any::<bool>(), 15),
    ) {
        let gold = gold_seed % scores.len();
        let filtered: BTreeSet<usize> = (0..scores.len()).filter(|&i| mask[i]).collect();
        let r = filtered_rank::<Q, i32>(&scores, gold, &filtered).unwrap();
        prop_assert_eq!(r, oracles::rank(&scores, gold, &filtered));
        let raw = filtered_rank::<Q, i32>(&scores, gold, &BTreeSet::new()).unwrap();
        prop_assert!(r <= raw);
        prop_assert!(r >= Q::from_integer(1));
        prop_assert!(r <= Q::from_integer(remaining_candidates(scores.len(), gold, &filtered) as i64));
    }

    #[test]
    fn ranking_metrics_match_the_oracle(ranks in proptest::collection::vec((1i64..30, 1i64..3), 1..20)) {
        let ranks: Vec<Q> = ranks.into_iter().map(|(a, b)| Ratio::new(a * b + b - 1, b).max(Q::from_integer(1))).collect();
        let m = ranking_metrics(&ranks).unwrap();
        prop_assert_eq!((m.mrr, m.hits_at_10), oracles::ranking(&ranks));
    }

    #[test]
    fn random_hits_is_bounded(sizes in proptest::collection::vec(1usize..40, 1..20)) {
        let h = random_hits_at_10(&sizes);
        prop_assert!((0.0..=1.0).contains(&h));
        if sizes.iter().all(|&s| s <= 10) {
            prop_assert!((h - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ckt_groups_are_valid_and_maximal(
        edges in proptest::collection::vec((0usize..9, 0usize..2, 0usize..9), 5..40),
        membership in proptest::collection::vec(proptest::collection::btree_set(0usize..3, 0..3), 9),
        seed in any::<u64>(),
    ) {
        let kg: Vec<KGTriple> = edges
            .iter()
            .filter(|(h, _, t)| h != t)
            .map(|(h, r, t)| KGTriple::new(&format!("e{h}"), &format!("r{r}"), &format!("e{t}")))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pairs: Vec<(String, String)> = membership
            .iter()
            .enumerate()
            .flat_map(|(e, cs)| cs.iter().map(move |c| (format!("e{e}"), format!("c{c}"))))
            .collect();
        let tax = Taxonomy::from_pairs(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        let out = build_ckt_splits(&kg, &tax, 50, &mut seed::stream(seed, "ckt"));
        let problems = oracles::ckt_problems(&out.groups, &kg, &tax);
        prop_assert!(problems.is_empty(), "{:?}", problems);
        prop_assert!(ckt_violations(&out.groups, &tax).is_empty());
        prop_assert_eq!(out.groups.len() + out.shortfall, 50);
        prop_assert!(no_group_can_be_added(&out.groups, &kg, &tax));
    }
}

/// Exhaustively searches for one more group compatible with `groups`.
fn no_group_can_be_added(groups: &[concept_core::evals::builders::CktGroup], kg: &[KGTriple], tax: &Taxonomy) -> bool {
    let used: BTreeSet<&KGTriple> = groups.iter().flat_map(|g| g.triples()).collect();
    let mut in_support: BTreeSet<&str> = BTreeSet::new();
    let mut as_query: BTreeSet<&str> = BTreeSet::new();
    for g in groups {
        in_support.insert(g.slot.differential(&g.support));
        in_support.insert(g.slot.fixed(&g.support));
        as_query.insert(g.slot.differential(&g.query_dev));
        as_query.insert(g.slot.differential(&g.query_test));
    }
    let shares = |es: [&str; 3]| -> bool {
        tax.concepts_of(es[0])
            .is_some_and(|c| c.iter().any(|c| es[1..].iter().all(|e| tax.concepts_of(e).is_some_and(|s| s.contains(c)))))
    };
    let free: Vec<&KGTriple> = kg.iter().filter(|t| !used.contains(t)).collect();
    for slot in [Slot::Head, Slot::Tail] {
        for s in &free {
            let (sd, fixed) = (slot.differential(s), slot.fixed(s));
            if sd == fixed || as_query.contains(sd) || as_query.contains(fixed) {
                continue;
            }
            let mates: Vec<&str> = free
                .iter()
                .filter(|t| t.relation == s.relation && slot.fixed(t) == fixed)
                .map(|t| slot.differential(t))
                .filter(|&e| e != sd && e != fixed && !in_support.contains(e) && e != slot.fixed(s))
                .collect();
            for (a, q1) in mates.iter().enumerate() {
                for q2 in &mates[a + 1..] {
                    if q1 != q2 && shares([sd, q1, q2]) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[test]
fn figer_finer_scan_removes_exactly_the_frequent_labels() {
    let mut rng = seed::stream(3, "finer");
    use rand::Rng;
    let mk = |i: usize, labels: Vec<String>| TypingRecord {
        id: format!("s{i}"),
        text: "plato".into(),
        span: CharSpan { start: 0, end: 5 },
        labels,
    };
    let draw = |rng: &mut seed::Rng, i: usize| {
        let labels: Vec<String> = (0..6).filter(|_| rng.random_bool(0.3)).map(|l| format!("l{l}")).collect();
        mk(i, if labels.is_empty() { vec!["l0".into()] } else { labels })
    };
    let splits = Splits {
        train: (0..200).map(|i| draw(&mut rng, i)).collect(),
        dev: (0..50).map(|i| draw(&mut rng, i)).collect(),
        test: (0..50).map(|i| draw(&mut rng, i)).collect(),
    };
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &splits.train {
        for l in r.labels.iter().collect::<BTreeSet<_>>() {
            *freq.entry(l).or_default() += 1;
        }
    }
    for threshold in [0, 30, 60, 65, 80, 1000] {
        let (out, report) = build_figer_finer(&splits, threshold);
        let removed: BTreeSet<&str> = freq.iter().filter(|(_, &n)| n > threshold).map(|(l, _)| *l).collect();
        assert_eq!(report.removed_labels.keys().map(String::as_str).collect::<BTreeSet<_>>(), removed);
        assert!(out.iter_all().all(|r| !r.labels.is_empty() && r.labels.iter().all(|l| !removed.contains(l.as_str()))));
        let survivors = |rs: &[TypingRecord]| rs.iter().filter(|r| r.labels.iter().any(|l| !removed.contains(l.as_str()))).count();
        assert_eq!(out.train.len(), survivors(&splits.train));
        assert_eq!(out.dev.len(), survivors(&splits.dev));
        assert_eq!(report.kept.train + report.dropped.train, 200);
    }
}

fn typing_record(i: usize, word: &str, ctx: &str, label: &str) -> TypingRecord {
    let text = format!("the {word} {ctx}");
    TypingRecord {
        id: format!("t{i}"),
        span: CharSpan { start: 4, end: 4 + word.len() },
        text,
        labels: vec![label.into()],
    }
}

#[test]
fn typing_learns_a_separable_set() {
    let people = ["plato", "socrates", "aristotle", "king", "poet", "actor"];
    let places = ["city", "town", "river", "island", "lake", "village"];
    let ctx = ["was", "is", "in", "and"];
    let mut train = Vec::new();
    for (k, c) in ctx.iter().enumerate() {
        for (i, w) in people.iter().enumerate() {
            train.push(typing_record(k * 100 + i, w, c, "person"));
        }
        for (i, w) in places.iter().enumerate() {
            train.push(typing_record(k * 100 + 50 + i, w, c, "place"));
        }
    }
    let test: Vec<_> = people
        .iter()
        .map(|w| typing_record(0, w, "of", "person"))
        .chain(places.iter().map(|w| typing_record(1, w, "of", "place")))
        .collect();
    let splits = Splits { train, dev: vec![], test };
    let labels = vec!["person".to_string(), "place".to_string()];
    let out = finetune_entity_typing(&encoder(1), &toy(), &splits, &labels, &ft(5)).unwrap();
    assert!(out.dev.is_none());
    let m = out.test.unwrap();
    assert_eq!(m.strict_acc, 1.0, "losses {:?}", out.epoch_losses);
    assert!(out.epoch_losses.last() < out.epoch_losses.first());
}

#[test]
fn relation_classification_learns_a_separable_set() {
    let heads = ["plato", "socrates", "aristotle", "king"];
    let tails = ["city", "school", "book", "band"];
    let verbs = [("taught", "teach"), ("founded", "found"), ("and", "none")];
    let record = |i: usize, h: &str, v: &str, t: &str, r: &str| {
        let text = format!("{h} {v} the {t}");
        let ts = h.len() + v.len() + 6;
        RelationRecord {
            id: format!("r{i}"),
            head: CharSpan { start: 0, end: h.len() },
            tail: CharSpan { start: ts, end: ts + t.len() },
            text,
            relation: r.into(),
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (a, h) in heads.iter().enumerate() {
        for (b, t) in tails.iter().enumerate() {
            for (v, r) in verbs {
                let rec = record(a * 10 + b, h, v, t, r);
                if (a + b) % 4 == 0 { test.push(rec) } else { train.push(rec) }
            }
        }
    }
    let splits = Splits { train, dev: vec![], test };
    let out = finetune_relation_classification(&encoder(2), &toy(), &splits, RcMode::Full, "none", &ft(8)).unwrap();
    assert_eq!(out.relations, ["found", "none", "teach"]);
    let m = out.test.unwrap();
    assert_eq!(m.micro_f1, 1.0, "losses {:?}", out.epoch_losses);
}

fn typed_kg() -> (Splits<KGTriple>, NameTable) {
    let people = ["plato", "socrates", "aristotle"];
    let places = ["city", "town", "river", "island"];
    let mut all = Vec::new();
    for p in people {
        for c in places {
            all.push(KGTriple::new(p, "born", c));
        }
    }
    let names: NameTable = people
        .iter()
        .chain(&places)
        .map(|e| (e.to_string(), e.to_string()))
        .chain([("born".to_string(), "born in".to_string())])
        .collect();
    let test = vec![all.remove(11), all.remove(5)];
    let dev = vec![all.remove(0)];
    (Splits { train: all, dev, test }, names)
}

#[test]
fn triple_classification_separates_type_mismatches() {
    let (kg, names) = typed_kg();
    let cfg = FineTuneConfig { negative_rate: 2, ..ft(40) };
    let out = triple_classification(&encoder(3), &toy(), &kg, &names, &cfg).unwrap();
    let m = out.test.unwrap();
    assert_eq!(m.positives, 2);
    assert_eq!(m.negatives, 4);
    assert!(m.balanced_accuracy >= 0.95, "{m:?} losses {:?}", out.epoch_losses);
}

#[test]
fn filtered_link_ranks_match_an_exhaustive_scorer() {
    let kg = vec![
        KGTriple::new("plato", "taught", "socrates"),
        KGTriple::new("plato", "taught", "aristotle"),
        KGTriple::new("socrates", "taught", "aristotle"),
        KGTriple::new("aristotle", "founded", "school"),
        KGTriple::new("plato", "founded", "city"),
    ];
    let names: NameTable = ["plato", "socrates", "aristotle", "school", "city", "taught", "founded"]
        .iter()
        .map(|e| (e.to_string(), e.to_string()))
        .collect();
    let tok = toy();
    let enc = encoder(4);
    let entities = kg_entities(&kg);
    assert_eq!(entities.len(), 5);
    let queries = both_directions(&kg);
    let scores = lp_scores(&enc, &tok, &names, &queries, &entities, 16).unwrap();
    let (ranks, sizes) = filtered_ranks(&scores, &queries, &entities, &AnswerIndex::new(&kg)).unwrap();

    let q_inputs: Vec<_> = queries
        .iter()
        .map(|(t, d)| (t.clone(), *d == Direction::Tail, lp_query(t, *d, &names, &tok, 16).unwrap()))
        .collect();
    let c_inputs: Vec<_> = entities
        .iter()
        .map(|e| (e.clone(), lp_candidate(e, &names, &tok, 16).unwrap()))
        .collect();
    let want = oracles::exhaustive_ranks(&enc, &q_inputs, &c_inputs, &kg);
    assert_eq!(ranks, want);
    // (plato, taught, ?) with gold socrates filters aristotle
    assert_eq!(sizes[0], 4);
    assert!(sizes.iter().all(|&s| s <= 5));
}
