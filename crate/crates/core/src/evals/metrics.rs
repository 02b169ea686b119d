//! Metric definitions, generic over the number type so that they can be
//! evaluated in exact rational arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{FromPrimitive, Num};
use serde::Serialize;

use crate::error::{Error, Result};

pub trait Metric: Num + FromPrimitive + Copy + PartialOrd {}
impl<T: Num + FromPrimitive + Copy + PartialOrd> Metric for T {}

fn n<T: Metric>(x: usize) -> T {
    T::from_usize(x).expect("count fits the metric type")
}

fn ratio<T: Metric>(a: usize, b: usize) -> T {
    if b == 0 {
        T::zero()
    } else {
        n::<T>(a) / n::<T>(b)
    }
}

fn harmonic<T: Metric>(p: T, r: T) -> T {
    if p + r == T::zero() {
        T::zero()
    } else {
        (T::one() + T::one()) * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TypingMetrics<T> {
    pub strict_acc: T,
    pub loose_macro_f1: T,
    pub loose_micro_f1: T,
    pub type_macro_f1: T,
    pub loose_macro_precision: T,
    pub loose_macro_recall: T,
}

/// Strict accuracy, loose macro and micro F1, and the mean per-label F1
/// over labels with gold support.
pub fn typing_metrics<T: Metric, L: Ord + Clone + std::fmt::Debug>(
    predictions: &[BTreeSet<L>],
    golds: &[BTreeSet<L>],
    labels: &[L],
) -> Result<TypingMetrics<T>> {
    if predictions.len() != golds.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} gold sets",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let vocab: BTreeSet<&L> = labels.iter().collect();
    for (i, (p, g)) in predictions.iter().zip(golds).enumerate() {
        if g.is_empty() {
            return Err(Error::arg(format!("sample {i} has an empty gold set")));
        }
        if let Some(l) = p.iter().chain(g).find(|l| !vocab.contains(l)) {
            return Err(Error::arg(format!("sample {i}: label {l:?} outside the label vocabulary")));
        }
    }
    let count = golds.len();
    let mut strict = 0;
    let mut p_sum = T::zero();
    let mut r_sum = T::zero();
    let (mut inter, mut pred, mut gold) = (0, 0, 0);
    let mut per_label: BTreeMap<&L, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(golds) {
        let k = p.intersection(g).count();
        strict += usize::from(p == g);
        p_sum = p_sum + ratio::<T>(k, p.len());
        r_sum = r_sum + ratio::<T>(k, g.len());
        inter += k;
        pred += p.len();
        gold += g.len();
        for l in p.union(g) {
            let e = per_label.entry(l).or_default();
            match (p.contains(l), g.contains(l)) {
                (true, true) => e.0 += 1,
                (true, false) => e.1 += 1,
                (false, true) => e.2 += 1,
                _ => {}
            }
        }
    }
    let macro_p = p_sum / n::<T>(count);
    let macro_r = r_sum / n::<T>(count);
    let micro_p = ratio::<T>(inter, pred);
    let micro_r = ratio::<T>(inter, gold);
    let supported: Vec<_> = per_label.values().filter(|(tp, _, fnn)| tp + fnn > 0).collect();
    let mut type_sum = T::zero();
    for &&(tp, fp, fnn) in &supported {
        type_sum = type_sum + ratio::<T>(2 * tp, 2 * tp + fp + fnn);
    }
    Ok(TypingMetrics {
        strict_acc: ratio(strict, count),
        loose_macro_f1: harmonic(macro_p, macro_r),
        loose_micro_f1: harmonic(micro_p, micro_r),
        type_macro_f1: if supported.is_empty() {
            T::zero()
        } else {
            type_sum / n::<T>(supported.len())
        },
        loose_macro_precision: macro_p,
        loose_macro_recall: macro_r,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RcMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub micro_f1: T,
}

/// Micro precision over predictions other than `no_relation` and recall
/// over golds other than `no_relation`.
pub fn rc_metrics<T: Metric, L: Eq>(predictions: &[L], golds: &[L], no_relation: &L) -> Result<RcMetrics<T>> {
    if predictions.len() != golds.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let (mut correct, mut predicted, mut gold) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(golds) {
        predicted += usize::from(p != no_relation);
        gold += usize::from(g != no_relation);
        correct += usize::from(p == g && g != no_relation);
    }
    let precision = ratio::<T>(correct, predicted);
    let recall = ratio::<T>(correct, gold);
    Ok(RcMetrics {
        precision,
        recall,
        micro_f1: harmonic(precision, recall),
    })
}

/// Rank of `gold` among `scores` with the candidates in `filtered` removed
/// (the gold itself is never removed). Ties count as the mean position of
/// their block: `1 + #higher + #tied / 2`.
pub fn filtered_rank<T: Metric, S: PartialOrd>(scores: &[S], gold: usize, filtered: &BTreeSet<usize>) -> Result<T> {
    if gold >= scores.len() {
        return Err(Error::arg(format!("gold index {gold} outside {} candidates", scores.len())));
    }
    let g = &scores[gold];
    let (mut higher, mut tied) = (0, 0);
    for (i, s) in scores.iter().enumerate() {
        if i == gold || filtered.contains(&i) {
            continue;
        }
        if s > g {
            higher += 1;
        } else if s == g {
            tied += 1;
        }
    }
    Ok(n::<T>(1 + higher) + ratio::<T>(tied, 2))
}

/// Number of candidates left once `filtered` is removed, gold included.
pub fn remaining_candidates(total: usize, gold: usize, filtered: &BTreeSet<usize>) -> usize {
    total - filtered.iter().filter(|&&i| i != gold && i < total).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankingMetrics<T> {
    pub mrr: T,
    pub hits_at_10: T,
    pub queries: usize,
}

pub fn ranking_metrics<T: Metric>(ranks: &[T]) -> Result<RankingMetrics<T>> {
    if ranks.is_empty() {
        return Err(Error::arg("no ranks"));
    }
    let ten = n::<T>(10);
    let mut rr = T::zero();
    let mut hits = 0;
    for &r in ranks {
        if r < T::one() {
            return Err(Error::arg("ranks start at 1"));
        }
        rr = rr + T::one() / r;
        hits += usize::from(r <= ten);
    }
    Ok(RankingMetrics {
        mrr: rr / n::<T>(ranks.len()),
        hits_at_10: ratio(hits, ranks.len()),
        queries: ranks.len(),
    })
}

/// Expected Hits@10 of a uniformly random ranking over `sizes[q]`
/// candidates per query.
pub fn random_hits_at_10(sizes: &[usize]) -> f64 {
    if sizes.is_empty() {
        return 0.0;
    }
    sizes
        .iter()
        .map(|&s| if s == 0 { 0.0 } else { s.min(10) as f64 / s as f64 })
        .sum::<f64>()
        / sizes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn set(xs: &[&'static str]) -> BTreeSet<&'static str> {
        xs.iter().copied().collect()
    }

    #[test]
    fn hand_worked_typing_case() {
        let golds = vec![set(&["a", "b"]), set(&["a"])];
        let preds = vec![set(&["a"]), set(&["a", "b"])];
        let m: TypingMetrics<Ratio<i64>> = typing_metrics(&preds, &golds, &["a", "b"]).unwrap();
        assert_eq!(m.strict_acc, Ratio::from_integer(0));
        assert_eq!(m.loose_macro_precision, Ratio::new(3, 4));
        assert_eq!(m.loose_macro_recall, Ratio::new(3, 4));
        assert_eq!(m.loose_macro_f1, Ratio::new(3, 4));
        assert_eq!(m.loose_micro_f1, Ratio::new(2, 3));
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let golds = vec![set(&["a", "b"]), set(&["c"])];
        let m: TypingMetrics<f64> = typing_metrics(&golds, &golds, &["a", "b", "c"]).unwrap();
        assert_eq!((m.strict_acc, m.loose_macro_f1, m.loose_micro_f1, m.type_macro_f1), (1.0, 1.0, 1.0, 1.0));
        let empty = vec![set(&[]), set(&[])];
        let e: TypingMetrics<f64> = typing_metrics(&empty, &golds, &["a", "b", "c"]).unwrap();
        assert_eq!(e.loose_macro_precision, 0.0);
        assert_eq!(e.loose_macro_f1, 0.0);
        assert!(typing_metrics::<f64, _>(&empty[..1], &golds, &["a"]).is_err());
    }

    #[test]
    fn rc_conventions() {
        let m: RcMetrics<f64> = rc_metrics(&["r1", "r2"], &["r1", "r2"], &"NA").unwrap();
        assert_eq!((m.precision, m.recall, m.micro_f1), (1.0, 1.0, 1.0));
        let z: RcMetrics<f64> = rc_metrics(&["NA", "NA"], &["r1", "NA"], &"NA").unwrap();
        assert_eq!((z.precision, z.recall), (0.0, 0.0));
        // 4-sample tally: correct r1; r2 predicted for NA; NA predicted for r1; r2 correct
        let t: RcMetrics<Ratio<i64>> = rc_metrics(&["r1", "r2", "NA", "r2"], &["r1", "NA", "r1", "r2"], &"NA").unwrap();
        assert_eq!(t.precision, Ratio::new(2, 3));
        assert_eq!(t.recall, Ratio::new(2, 3));
    }

    #[test]
    fn ranks_and_ties() {
        let m: RankingMetrics<f64> = ranking_metrics(&[1.0, 2.0, 4.0]).unwrap();
        assert!((m.mrr - 0.583_333_333_333_333_4).abs() < 1e-12);
        let scores = [0.5, 0.9, 0.5, 0.1, 0.5];
        let none = BTreeSet::new();
        assert_eq!(filtered_rank::<f64, _>(&scores, 0, &none).unwrap(), 3.0);
        let f: BTreeSet<usize> = [1].into();
        assert_eq!(filtered_rank::<f64, _>(&scores, 0, &f).unwrap(), 2.0);
        assert_eq!(filtered_rank::<f64, _>(&scores, 1, &none).unwrap(), 1.0);
        assert_eq!(remaining_candidates(5, 0, &f), 4);
        assert!((random_hits_at_10(&[5, 20]) - 0.75).abs() < 1e-12);
    }
}
