//! Brute-force reference implementations used as test oracles. Label sets
//! are bitmasks over at most eight labels; arithmetic is exact.

use std::collections::BTreeSet;

use concept_core::evals::builders::{CktGroup, Slot};
use concept_core::evals::data::KGTriple;
use concept_core::evals::finetune::Input;
use concept_core::model::Encoder;
use concept_core::taxonomy::Taxonomy;
use num_rational::Ratio;

pub type Q = Ratio<i64>;

fn q(a: u32, b: u32) -> Q {
    if b == 0 {
        Q::from_integer(0)
    } else {
        Q::new(a as i64, b as i64)
    }
}

fn f1(p: Q, r: Q) -> Q {
    if p + r == Q::from_integer(0) {
        Q::from_integer(0)
    } else {
        Q::from_integer(2) * p * r / (p + r)
    }
}

/// `(strict, loose macro F1, loose micro F1, type macro F1, macro P, macro R)`.
pub fn typing(preds: &[u8], golds: &[u8], labels: u32) -> [Q; 6] {
    let n = golds.len() as i64;
    let strict = preds.iter().zip(golds).filter(|(p, g)| p == g).count() as i64;
    let mut mp = Q::from_integer(0);
    let mut mr = Q::from_integer(0);
    let (mut i, mut pc, mut gc) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        mp += q((p & g).count_ones(), p.count_ones());
        mr += q((p & g).count_ones(), g.count_ones());
        i += (p & g).count_ones();
        pc += p.count_ones();
        gc += g.count_ones();
    }
    let (mp, mr) = (mp / n, mr / n);
    let mut type_sum = Q::from_integer(0);
    let mut supported = 0;
    for l in 0..labels {
        let bit = 1u8 << l;
        let tp = preds.iter().zip(golds).filter(|(p, g)| *p & bit != 0 && *g & bit != 0).count() as u32;
        let fp = preds.iter().zip(golds).filter(|(p, g)| *p & bit != 0 && *g & bit == 0).count() as u32;
        let fnn = preds.iter().zip(golds).filter(|(p, g)| *p & bit == 0 && *g & bit != 0).count() as u32;
        if tp + fnn > 0 {
            supported += 1;
            type_sum += q(2 * tp, 2 * tp + fp + fnn);
        }
    }
    let type_macro = if supported == 0 { Q::from_integer(0) } else { type_sum / supported };
    [Q::new(strict, n), f1(mp, mr), f1(q(i, pc), q(i, gc)), type_macro, mp, mr]
}

pub fn bits_to_set(bits: u8) -> BTreeSet<u32> {
    (0..8).filter(|l| bits & (1 << l) != 0).collect()
}

/// `(precision, recall, F1)` with label 0 as no-relation.
pub fn relation(preds: &[u8], golds: &[u8]) -> [Q; 3] {
    let tp = preds.iter().zip(golds).filter(|(p, g)| p == g && **g != 0).count() as u32;
    let p = q(tp, preds.iter().filter(|&&p| p != 0).count() as u32);
    let r = q(tp, golds.iter().filter(|&&g| g != 0).count() as u32);
    [p, r, f1(p, r)]
}

/// Mean 1-based position of the gold score's tie block after sorting the
/// surviving candidates in descending order.
pub fn rank(scores: &[i32], gold: usize, filtered: &BTreeSet<usize>) -> Q {
    let mut kept: Vec<i32> = (0..scores.len())
        .filter(|i| *i == gold || !filtered.contains(i))
        .map(|i| scores[i])
        .collect();
    kept.sort_unstable_by(|a, b| b.cmp(a));
    let positions: Vec<i64> = (1..=kept.len() as i64).filter(|&p| kept[p as usize - 1] == scores[gold]).collect();
    Q::new(positions.iter().sum(), positions.len() as i64)
}

/// `(MRR, Hits@10)`.
pub fn ranking(ranks: &[Q]) -> (Q, Q) {
    let n = ranks.len() as i64;
    let mrr = ranks.iter().map(|r| r.recip()).sum::<Q>() / n;
    let hits = ranks.iter().filter(|r| **r <= Q::from_integer(10)).count() as i64;
    (mrr, Q::new(hits, n))
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Filtered ranks from one forward pass per query and per candidate, with
/// every known completion found by scanning `known`.
pub fn exhaustive_ranks(
    encoder: &Encoder<f32>,
    queries: &[(KGTriple, bool, Input)],
    candidates: &[(String, Input)],
    known: &[KGTriple],
) -> Vec<f64> {
    let cls = |x: &Input| -> Vec<f64> {
        let (h, _) = encoder.forward_row(&x.tokens, &vec![true; x.tokens.len()], None).unwrap();
        h.row(0).iter().map(|&v| v as f64).collect()
    };
    let cand: Vec<Vec<f64>> = candidates.iter().map(|(_, x)| cls(x)).collect();
    queries
        .iter()
        .map(|(t, tail, x)| {
            let qv = cls(x);
            let score = |c: &Vec<f64>| qv.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            let gold = if *tail { &t.tail } else { &t.head };
            let gold_score = score(&cand[candidates.iter().position(|(e, _)| e == gold).unwrap()]);
            let (mut higher, mut tied) = (0usize, 0usize);
            for ((e, _), c) in candidates.iter().zip(&cand) {
                if e == gold {
                    continue;
                }
                let completes = known.iter().any(|k| {
                    k.relation == t.relation
                        && if *tail { k.head == t.head && &k.tail == e } else { k.tail == t.tail && &k.head == e }
                });
                if completes {
                    continue;
                }
                let s = score(c);
                if s > gold_score {
                    higher += 1;
                } else if s == gold_score {
                    tied += 1;
                }
            }
            1.0 + higher as f64 + tied as f64 / 2.0
        })
        .collect()
}

/// Independent check of transfer groups against the graph and taxonomy.
pub fn ckt_problems(groups: &[CktGroup], kg: &[KGTriple], taxonomy: &Taxonomy) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    let mut support_entities = BTreeSet::new();
    for g in groups {
        support_entities.insert(g.support.head.clone());
        support_entities.insert(g.support.tail.clone());
    }
    for (i, g) in groups.iter().enumerate() {
        let ts = [&g.support, &g.query_dev, &g.query_test];
        for t in ts {
            if !kg.contains(t) {
                problems.push(format!("{i}: {t:?} not in the graph"));
            }
            if !seen.insert((*t).clone()) {
                problems.push(format!("{i}: {t:?} used twice"));
            }
        }
        let (diff, fixed): (Vec<&String>, Vec<&String>) = match g.slot {
            Slot::Head => (ts.iter().map(|t| &t.head).collect(), ts.iter().map(|t| &t.tail).collect()),
            Slot::Tail => (ts.iter().map(|t| &t.tail).collect(), ts.iter().map(|t| &t.head).collect()),
        };
        if fixed[0] != fixed[1] || fixed[0] != fixed[2] || ts.iter().any(|t| t.relation != g.support.relation) {
            problems.push(format!("{i}: differs outside the slot"));
        }
        if diff[0] == diff[1] || diff[0] == diff[2] || diff[1] == diff[2] {
            problems.push(format!("{i}: repeated differential entity"));
        }
        let common: Vec<&String> = match taxonomy.concepts_of(diff[0]) {
            Some(first) => first
                .iter()
                .filter(|c| diff[1..].iter().all(|e| taxonomy.concepts_of(e).is_some_and(|s| s.contains(*c))))
                .collect(),
            None => Vec::new(),
        };
        if common.is_empty() {
            problems.push(format!("{i}: no shared concept"));
        }
        for e in &diff[1..] {
            if support_entities.contains(*e) {
                problems.push(format!("{i}: query entity {e} in a support fact"));
            }
        }
    }
    problems
}
