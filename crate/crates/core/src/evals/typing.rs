//! Entity typing: markers around the mention, the two marker states
//! concatenated, one sigmoid per label.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use super::data::{Splits, TypingRecord};
use super::finetune::{covering_tokens, fit, fit_window, multilabel_decision, rows_f64, Classifier, FineTuneConfig, Input};
use super::metrics::{typing_metrics, TypingMetrics};
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::pretrain::ecp_loss_with_logits;
use crate::scalar::Scalar;
use crate::tokenizer::{WordPiece, ENTITY_END, ENTITY_START};

pub struct TypingOutcome<T> {
    pub model: Classifier<T>,
    pub labels: Vec<String>,
    pub epoch_losses: Vec<f64>,
    pub dev: Option<TypingMetrics<f64>>,
    pub test: Option<TypingMetrics<f64>>,
    pub test_predictions: Vec<BTreeSet<String>>,
}

pub(crate) fn check_span(text: &str, start: usize, end: usize, id: &str) -> Result<()> {
    let n = text.chars().count();
    if start >= end || end > n {
        return Err(Error::data(id, format!("span {start}..{end} invalid for text of {n} characters")));
    }
    Ok(())
}

/// `[CLS] .. [E] mention [/E] .. [SEP]`, pooling both markers.
pub fn typing_input(record: &TypingRecord, tokenizer: &WordPiece, max_len: usize) -> Result<Input> {
    check_span(&record.text, record.span.start, record.span.end, &record.id)?;
    let open = tokenizer.require(ENTITY_START)?;
    let close = tokenizer.require(ENTITY_END)?;
    let tokens = tokenizer.encode(&record.text);
    let (i, j) = covering_tokens(&tokens, record.span)
        .ok_or_else(|| Error::data(&record.id, "mention covers no tokens"))?;
    let mut content: Vec<u32> = Vec::with_capacity(tokens.len() + 2);
    content.extend(tokens[..i].iter().map(|t| t.id));
    content.push(open);
    content.extend(tokens[i..=j].iter().map(|t| t.id));
    content.push(close);
    content.extend(tokens[j + 1..].iter().map(|t| t.id));
    let (seq, off) = fit_window(&content, (i, j + 2), max_len, &record.id)?;
    Ok(Input {
        tokens: seq,
        picks: vec![(i as isize + off) as usize, (j as isize + 2 + off) as usize],
    })
}

fn label_index(labels: &[String]) -> Result<BTreeMap<&str, usize>> {
    let mut index = BTreeMap::new();
    for (k, l) in labels.iter().enumerate() {
        if index.insert(l.as_str(), k).is_some() {
            return Err(Error::arg(format!("label {l:?} listed twice")));
        }
    }
    if index.is_empty() {
        return Err(Error::arg("empty label vocabulary"));
    }
    Ok(index)
}

fn gold_set(record: &TypingRecord, index: &BTreeMap<&str, usize>) -> Result<BTreeSet<usize>> {
    if record.labels.is_empty() {
        return Err(Error::data(&record.id, "empty gold label set"));
    }
    record
        .labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| Error::data(&record.id, format!("label {l:?} outside the label vocabulary")))
        })
        .collect()
}

/// Predicted label indices per record.
pub fn predict_typing<T: Scalar>(
    model: &Classifier<T>,
    tokenizer: &WordPiece,
    records: &[TypingRecord],
    config: &FineTuneConfig,
) -> Result<Vec<Vec<usize>>> {
    let inputs = records
        .iter()
        .map(|r| typing_input(r, tokenizer, config.max_len))
        .collect::<Result<Vec<_>>>()?;
    let logits = model.logits(&inputs)?;
    Ok(rows_f64(&logits)
        .iter()
        .map(|row| multilabel_decision(row, config.threshold))
        .collect())
}

fn evaluate<T: Scalar>(
    model: &Classifier<T>,
    tokenizer: &WordPiece,
    records: &[TypingRecord],
    labels: &[String],
    config: &FineTuneConfig,
) -> Result<Option<(TypingMetrics<f64>, Vec<BTreeSet<String>>)>> {
    if records.is_empty() {
        return Ok(None);
    }
    let index = label_index(labels)?;
    let golds: Vec<BTreeSet<usize>> = records.iter().map(|r| gold_set(r, &index)).collect::<Result<_>>()?;
    let preds: Vec<BTreeSet<usize>> = predict_typing(model, tokenizer, records, config)?
        .into_iter()
        .map(|p| p.into_iter().collect())
        .collect();
    let all: Vec<usize> = (0..labels.len()).collect();
    let metrics = typing_metrics(&preds, &golds, &all)?;
    let named = preds
        .iter()
        .map(|p| p.iter().map(|&k| labels[k].clone()).collect())
        .collect();
    Ok(Some((metrics, named)))
}

/// Fine-tunes a copy of `encoder` on the training split with per-label
/// binary cross-entropy and scores dev and test.
pub fn finetune_entity_typing<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    splits: &Splits<TypingRecord>,
    labels: &[String],
    config: &FineTuneConfig,
) -> Result<TypingOutcome<T>> {
    config.validate()?;
    let index = label_index(labels)?;
    let mut inputs = Vec::with_capacity(splits.train.len());
    let mut targets = Array2::<T>::zeros((splits.train.len(), labels.len()));
    for (r, rec) in splits.train.iter().enumerate() {
        for k in gold_set(rec, &index)? {
            targets[[r, k]] = T::one();
        }
        inputs.push(typing_input(rec, tokenizer, config.max_len)?);
    }
    for rec in splits.dev.iter().chain(&splits.test) {
        gold_set(rec, &index)?;
    }
    let mut model = Classifier::new(encoder, 2, labels.len(), config.seed)?;
    let epoch_losses = fit(&mut model, &inputs, config, "typing", |idx, logits| {
        let t = targets.select(ndarray::Axis(0), idx);
        Ok(ecp_loss_with_logits(logits, t.view(), &vec![true; idx.len()]))
    })?;
    let dev = evaluate(&model, tokenizer, &splits.dev, labels, config)?.map(|(m, _)| m);
    let (test, test_predictions) = match evaluate(&model, tokenizer, &splits.test, labels, config)? {
        Some((m, p)) => (Some(m), p),
        None => (None, Vec::new()),
    };
    Ok(TypingOutcome {
        model,
        labels: labels.to_vec(),
        epoch_losses,
        dev,
        test,
        test_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evals::data::CharSpan;
    use crate::tokenizer::toy;

    fn rec(text: &str, start: usize, end: usize, labels: &[&str]) -> TypingRecord {
        TypingRecord {
            id: "r".into(),
            text: text.into(),
            span: CharSpan { start, end },
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn markers_add_two_tokens() {
        let tok = toy();
        let r = rec("the city was", 4, 8, &["a"]);
        let plain = tok.encode_ids(&r.text).len() + 2;
        let x = typing_input(&r, &tok, 64).unwrap();
        assert_eq!(x.tokens.len(), plain + 2);
        assert_eq!(x.tokens[x.picks[0]], tok.token_id(ENTITY_START).unwrap());
        assert_eq!(x.tokens[x.picks[1]], tok.token_id(ENTITY_END).unwrap());
    }

    #[test]
    fn bad_spans_and_labels_name_the_sample() {
        let tok = toy();
        let err = typing_input(&rec("the city", 5, 50, &["a"]), &tok, 64).unwrap_err();
        assert!(err.to_string().contains("at r"), "{err}");
        let vocab = ["a".to_string()];
        let idx = label_index(&vocab).unwrap();
        let err = gold_set(&rec("the city", 4, 8, &["zz"]), &idx).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }
}
