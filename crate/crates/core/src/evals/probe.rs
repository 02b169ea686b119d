use ndarray::Array2;
use serde::Serialize;

use crate::corpus::{prepare_document, AnnotatedDocument, PretrainExample};
use crate::error::{Error, Result};
use crate::model::{span_representation, ConceptModel};
use crate::scalar::Scalar;
use crate::taxonomy::{ConceptVocab, Taxonomy};
use crate::tokenizer::{WordPiece, MASK};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub micro_f1: f64,
    pub top1_acc: f64,
    pub mentions: usize,
    pub masked: bool,
}

/// Eval-mode final states of one unpadded example.
pub fn encode_example<T: Scalar>(model: &ConceptModel<T>, ex: &PretrainExample) -> Result<Array2<T>> {
    let mask = vec![true; ex.len()];
    Ok(model.encoder.forward_row(&ex.token_ids, &mask, None)?.0)
}

/// Prepared examples for a document set, optionally with every mention
/// replaced by `[MASK]` tokens.
pub fn probe_examples(
    docs: &[AnnotatedDocument],
    tokenizer: &WordPiece,
    taxonomy: &Taxonomy,
    vocab: &ConceptVocab,
    max_len: usize,
    mask_mentions: bool,
) -> Result<Vec<PretrainExample>> {
    let mut out = Vec::new();
    for d in docs {
        let (exs, _) = prepare_document(d, tokenizer, taxonomy, vocab, max_len)?;
        for mut ex in exs {
            if mask_mentions {
                let spans: Vec<_> = ex.mentions.iter().map(|m| (m.span.start, m.span.end)).collect();
                for (s, e) in spans {
                    ex.token_ids[s..=e].fill(MASK);
                }
                for m in ex.mentions.iter_mut() {
                    m.ecp_masked = true;
                }
            }
            out.push(ex);
        }
    }
    Ok(out)
}

/// Zero-shot concept prediction with the pre-trained concept head.
/// Predictions are the concepts with probability above 0.5; top-1 counts a
/// hit when the most probable concept is gold. Mentions without a valid
/// target are skipped.
pub fn zero_shot_concept_probe<T: Scalar>(
    model: &ConceptModel<T>,
    tokenizer: &WordPiece,
    docs: &[AnnotatedDocument],
    taxonomy: &Taxonomy,
    vocab: &ConceptVocab,
    mask_mentions: bool,
    max_len: usize,
) -> Result<ProbeReport> {
    if vocab.len() != model.ecp.concepts() {
        return Err(Error::Checkpoint(format!(
            "concept vocabulary has {} entries but the head predicts {}",
            vocab.len(),
            model.ecp.concepts()
        )));
    }
    let examples = probe_examples(docs, tokenizer, taxonomy, vocab, max_len, mask_mentions)?;
    let (mut tp, mut fp, mut fnn, mut hits, mut n) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for ex in &examples {
        let valid: Vec<_> = ex.mentions.iter().filter(|m| m.target.is_valid()).collect();
        if valid.is_empty() {
            continue;
        }
        let h = encode_example(model, ex)?;
        let d = model.encoder.hidden();
        let mut spans = Array2::zeros((valid.len(), 2 * d));
        for (mut row, m) in spans.rows_mut().into_iter().zip(&valid) {
            row.assign(&span_representation(h.view(), &m.span)?);
        }
        let probs = model.ecp.probabilities(spans.view())?;
        for (p, m) in probs.rows().into_iter().zip(&valid) {
            let half = T::lit(0.5);
            for (k, &pk) in p.iter().enumerate() {
                match (pk > half, m.target.hot[k]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fnn += 1,
                    _ => {}
                }
            }
            let best = argmax(p.iter().copied());
            hits += usize::from(m.target.hot[best]);
            n += 1;
        }
    }
    Ok(ProbeReport {
        micro_f1: f1(tp, fp, fnn),
        top1_acc: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        mentions: n,
        masked: mask_mentions,
    })
}

/// First index of the maximum.
pub fn argmax<T: PartialOrd + Copy>(xs: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in xs.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// F1 from counts; 0 when there are no predicted or no gold positives.
pub fn f1(tp: usize, fp: usize, fnn: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fnn) as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax([0.1, 0.7, 0.7, 0.2]), 1);
        assert_eq!(argmax(Vec::<f64>::new()), 0);
    }

    #[test]
    fn f1_counts() {
        assert_eq!(f1(3, 0, 0), 1.0);
        assert_eq!(f1(0, 2, 2), 0.0);
        assert!((f1(2, 1, 1) - 2.0 / 3.0).abs() < 1e-12);
    }
}
