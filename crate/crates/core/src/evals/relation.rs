//! Relation classification from the `[CLS]` state, with the pair marked in
//! context or given alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{RelationRecord, Splits};
use super::finetune::{covering_tokens, fit, fit_window, rows_f64, segments_input, Classifier, FineTuneConfig, Input};
use super::metrics::{rc_metrics, RcMetrics};
use super::probe::argmax;
use super::typing::check_span;
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::pretrain::mlm_loss_with_grad;
use crate::scalar::Scalar;
use crate::tokenizer::{WordPiece, HEAD_END, HEAD_START, TAIL_END, TAIL_START};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcMode {
    /// Whole sentence with `[H] [/H]` and `[T] [/T]` around the pair.
    #[default]
    Full,
    /// `[CLS] head [SEP] tail [SEP]`, context discarded.
    OnlyMention,
}

impl std::str::FromStr for RcMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RcMode::Full),
            "only_mention" | "only-mention" => Ok(RcMode::OnlyMention),
            _ => Err(Error::arg(format!("unknown relation mode {s:?} (full, only_mention)"))),
        }
    }
}

/// Model input for one record, or `None` when head and tail overlap.
pub fn relation_input(record: &RelationRecord, tokenizer: &WordPiece, mode: RcMode, max_len: usize) -> Result<Option<Input>> {
    check_span(&record.text, record.head.start, record.head.end, &record.id)?;
    check_span(&record.text, record.tail.start, record.tail.end, &record.id)?;
    if record.head.overlaps(&record.tail) {
        return Ok(None);
    }
    let tokens = tokenizer.encode(&record.text);
    let cover = |span| covering_tokens(&tokens, span).ok_or_else(|| Error::data(&record.id, "span covers no tokens"));
    let (hi, hj) = cover(record.head)?;
    let (ti, tj) = cover(record.tail)?;
    if hi <= tj && ti <= hj {
        return Ok(None);
    }
    let ids = |a: usize, b: usize| tokens[a..=b].iter().map(|t| t.id).collect::<Vec<_>>();
    match mode {
        RcMode::OnlyMention => Ok(Some(Input::cls(segments_input(&[ids(hi, hj), ids(ti, tj)], max_len, &record.id)?))),
        RcMode::Full => {
            let marks = [
                tokenizer.require(HEAD_START)?,
                tokenizer.require(HEAD_END)?,
                tokenizer.require(TAIL_START)?,
                tokenizer.require(TAIL_END)?,
            ];
            let mut content = Vec::with_capacity(tokens.len() + 4);
            let (mut lo, mut hi_mark) = (usize::MAX, 0);
            for (k, t) in tokens.iter().enumerate() {
                if k == hi || k == ti {
                    lo = lo.min(content.len());
                    content.push(if k == hi { marks[0] } else { marks[2] });
                }
                content.push(t.id);
                if k == hj || k == tj {
                    hi_mark = content.len();
                    content.push(if k == hj { marks[1] } else { marks[3] });
                }
            }
            let (seq, _) = fit_window(&content, (lo, hi_mark), max_len, &record.id)?;
            Ok(Some(Input::cls(seq)))
        }
    }
}

/// Relation labels of the training split plus `no_relation`, sorted.
pub fn relation_vocab(train: &[RelationRecord], no_relation: &str) -> Vec<String> {
    let mut v: Vec<String> = train.iter().map(|r| r.relation.clone()).collect();
    v.push(no_relation.to_string());
    v.sort();
    v.dedup();
    v
}

pub struct RcOutcome<T> {
    pub model: Classifier<T>,
    pub relations: Vec<String>,
    pub epoch_losses: Vec<f64>,
    /// Ids of records skipped for overlapping head and tail.
    pub skipped: Splits<String>,
    pub dev: Option<RcMetrics<f64>>,
    pub test: Option<RcMetrics<f64>>,
    pub test_predictions: Vec<String>,
}

struct Prepared {
    inputs: Vec<Input>,
    labels: Vec<usize>,
    skipped: Vec<String>,
}

fn prepare(
    records: &[RelationRecord],
    tokenizer: &WordPiece,
    mode: RcMode,
    index: &BTreeMap<&str, usize>,
    max_len: usize,
) -> Result<Prepared> {
    let mut p = Prepared {
        inputs: Vec::new(),
        labels: Vec::new(),
        skipped: Vec::new(),
    };
    for r in records {
        let label = *index
            .get(r.relation.as_str())
            .ok_or_else(|| Error::data(&r.id, format!("relation {:?} outside the label vocabulary", r.relation)))?;
        match relation_input(r, tokenizer, mode, max_len)? {
            Some(x) => {
                p.inputs.push(x);
                p.labels.push(label);
            }
            None => {
                log::warn!("{}: head and tail overlap, skipped", r.id);
                p.skipped.push(r.id.clone());
            }
        }
    }
    Ok(p)
}

/// Predicted label index per input.
pub fn predict_relations<T: Scalar>(model: &Classifier<T>, inputs: &[Input]) -> Result<Vec<usize>> {
    Ok(rows_f64(&model.logits(inputs)?).iter().map(|r| argmax(r.iter().copied())).collect())
}

pub fn finetune_relation_classification<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    splits: &Splits<RelationRecord>,
    mode: RcMode,
    no_relation: &str,
    config: &FineTuneConfig,
) -> Result<RcOutcome<T>> {
    config.validate()?;
    let relations = relation_vocab(&splits.train, no_relation);
    let index: BTreeMap<&str, usize> = relations.iter().enumerate().map(|(k, r)| (r.as_str(), k)).collect();
    let train = prepare(&splits.train, tokenizer, mode, &index, config.max_len)?;
    let dev = prepare(&splits.dev, tokenizer, mode, &index, config.max_len)?;
    let test = prepare(&splits.test, tokenizer, mode, &index, config.max_len)?;
    let mut model = Classifier::new(encoder, 1, relations.len(), config.seed)?;
    let labels: Vec<Option<u32>> = train.labels.iter().map(|&l| Some(l as u32)).collect();
    let epoch_losses = fit(&mut model, &train.inputs, config, "relation", |idx, logits| {
        let batch: Vec<Option<u32>> = idx.iter().map(|&i| labels[i]).collect();
        Ok(mlm_loss_with_grad(logits, &batch))
    })?;
    let na = index[no_relation];
    let score = |p: &Prepared| -> Result<Option<(RcMetrics<f64>, Vec<usize>)>> {
        if p.inputs.is_empty() {
            return Ok(None);
        }
        let preds = predict_relations(&model, &p.inputs)?;
        Ok(Some((rc_metrics(&preds, &p.labels, &na)?, preds)))
    };
    let dev_metrics = score(&dev)?.map(|(m, _)| m);
    let (test_metrics, test_predictions) = match score(&test)? {
        Some((m, p)) => (Some(m), p.into_iter().map(|k| relations[k].clone()).collect()),
        None => (None, Vec::new()),
    };
    Ok(RcOutcome {
        model,
        relations,
        epoch_losses,
        skipped: Splits {
            train: train.skipped,
            dev: dev.skipped,
            test: test.skipped,
        },
        dev: dev_metrics,
        test: test_metrics,
        test_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evals::data::CharSpan;
    use crate::tokenizer::{toy, CLS, SEP};

    fn rec(head: (usize, usize), tail: (usize, usize)) -> RelationRecord {
        RelationRecord {
            id: "q".into(),
            text: "plato taught in the city".into(),
            head: CharSpan { start: head.0, end: head.1 },
            tail: CharSpan { start: tail.0, end: tail.1 },
            relation: "r".into(),
        }
    }

    #[test]
    fn only_mention_layout() {
        let tok = toy();
        let x = relation_input(&rec((0, 5), (20, 24)), &tok, RcMode::OnlyMention, 32)
            .unwrap()
            .unwrap();
        assert_eq!(x.tokens, vec![CLS, tok.token_id("plato").unwrap(), SEP, tok.token_id("city").unwrap(), SEP]);
    }

    #[test]
    fn full_mode_marks_both_spans() {
        let tok = toy();
        let x = relation_input(&rec((20, 24), (0, 5)), &tok, RcMode::Full, 32).unwrap().unwrap();
        let plain = tok.encode_ids("plato taught in the city").len();
        assert_eq!(x.tokens.len(), plain + 6);
        let id = |s| tok.token_id(s).unwrap();
        assert_eq!(&x.tokens[1..4], &[id("[T]"), id("plato"), id("[/T]")]);
        assert_eq!(&x.tokens[x.tokens.len() - 4..], &[id("[H]"), id("city"), id("[/H]"), SEP]);
    }

    #[test]
    fn overlap_is_skipped() {
        let tok = toy();
        assert!(relation_input(&rec((0, 5), (3, 10)), &tok, RcMode::Full, 32).unwrap().is_none());
    }
}
