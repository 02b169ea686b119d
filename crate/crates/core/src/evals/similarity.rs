use ndarray::Array1;
use serde::Serialize;

use super::probe::{encode_example, probe_examples};
use crate::corpus::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::model::{span_representation, ConceptModel};
use crate::scalar::Scalar;
use crate::taxonomy::{ConceptVocab, Taxonomy};
use crate::tokenizer::WordPiece;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub mean_within: f64,
    pub mean_across: f64,
    pub gap: f64,
    pub pairs_within: usize,
    pub pairs_across: usize,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean pairwise cosine similarity within and across labels. Needs at
/// least two labels with at least two items each.
pub fn entity_similarity_report<L: Ord + Clone>(items: &[(L, Vec<f64>)]) -> Result<SimilarityReport> {
    let mut counts = std::collections::BTreeMap::new();
    for (l, _) in items {
        *counts.entry(l.clone()).or_insert(0usize) += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(Error::arg("similarity report needs at least two labels with two or more mentions each"));
    }
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let s = cosine(&items[i].1, &items[j].1);
            if items[i].0 == items[j].0 {
                within += s;
                nw += 1;
            } else {
                across += s;
                na += 1;
            }
        }
    }
    let mean_within = within / nw as f64;
    let mean_across = across / na as f64;
    Ok(SimilarityReport {
        mean_within,
        mean_across,
        gap: mean_within - mean_across,
        pairs_within: nw,
        pairs_across: na,
    })
}

/// `[h_i ; h_j]` for every mention with a valid target, labelled by its
/// first gold concept.
pub fn mention_representations<T: Scalar>(
    model: &ConceptModel<T>,
    tokenizer: &WordPiece,
    docs: &[AnnotatedDocument],
    taxonomy: &Taxonomy,
    vocab: &ConceptVocab,
    mask_mentions: bool,
    max_len: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for ex in probe_examples(docs, tokenizer, taxonomy, vocab, max_len, mask_mentions)? {
        if !ex.mentions.iter().any(|m| m.target.is_valid()) {
            continue;
        }
        let h = encode_example(model, &ex)?;
        for m in ex.mentions.iter().filter(|m| m.target.is_valid()) {
            let rep: Array1<T> = span_representation(h.view(), &m.span)?;
            let label = m.target.positives().next().expect("valid target has a positive");
            out.push((label, rep.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()));
        }
    }
    Ok(out)
}
