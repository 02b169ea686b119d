use serde::Serialize;

use super::align::{align_to_tokens, AlignReport, DropReason};
use super::{AnnotatedDocument, ExampleMention, PretrainExample};
use crate::error::{Error, Result};
use crate::taxonomy::{lookup_concepts, ConceptVocab, Taxonomy};
use crate::tokenizer::{WordPiece, CLS, SEP};

/// Totals over a prepared corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PrepareReport {
    pub documents: usize,
    pub examples: usize,
    pub mentions_in: usize,
    pub mentions_kept: usize,
    pub splits_token: usize,
    pub no_tokens: usize,
    pub overlap: usize,
    pub straddles: usize,
    pub unknown_entities: usize,
}

impl PrepareReport {
    fn absorb(&mut self, report: &AlignReport) {
        self.splits_token += report.count(DropReason::SplitsToken);
        self.no_tokens += report.count(DropReason::NoTokens);
        self.overlap += report.count(DropReason::Overlap);
        self.straddles += report.count(DropReason::Straddles);
    }
}

/// Tokenizes a document, aligns its mentions and cuts it into
/// `[CLS] window [SEP]` examples of at most `max_len` tokens. Mentions that
/// cross a window boundary are dropped from both windows.
pub fn prepare_document(
    doc: &AnnotatedDocument,
    tokenizer: &WordPiece,
    taxonomy: &Taxonomy,
    vocab: &ConceptVocab,
    max_len: usize,
) -> Result<(Vec<PretrainExample>, PrepareReport)> {
    if max_len < 3 {
        return Err(Error::arg(format!("max_len {max_len} leaves no room for content")));
    }
    doc.validate()?;
    let tokens = tokenizer.encode(&doc.text);
    let (spans, mut align) = align_to_tokens(doc, &tokens);
    let mut report = PrepareReport {
        documents: 1,
        mentions_in: doc.mentions.len(),
        ..Default::default()
    };
    let width = max_len - 2;
    let n_windows = tokens.len().div_ceil(width).max(1);
    let mut examples = Vec::with_capacity(n_windows);
    let mut straddling = 0;
    for w in 0..n_windows {
        let lo = w * width;
        let hi = (lo + width).min(tokens.len());
        let mut ids = Vec::with_capacity(hi - lo + 2);
        ids.push(CLS);
        ids.extend(tokens[lo..hi].iter().map(|t| t.id));
        ids.push(SEP);
        let mut mentions = Vec::new();
        for s in &spans {
            let inside = s.start >= lo && s.end < hi;
            let touches = s.start < hi && s.end >= lo;
            if inside {
                let target = lookup_concepts(taxonomy, &s.entity, vocab);
                if target.unknown {
                    report.unknown_entities += 1;
                }
                mentions.push(ExampleMention {
                    span: s.shifted(1 - lo as isize),
                    target,
                    ecp_masked: false,
                });
            } else if touches && s.start >= lo {
                straddling += 1;
            }
        }
        report.mentions_kept += mentions.len();
        examples.push(PretrainExample::new(format!("{}#{w}", doc.doc_id), ids, mentions));
    }
    align
        .dropped
        .extend(std::iter::repeat_n((usize::MAX, DropReason::Straddles), straddling));
    report.absorb(&align);
    report.examples = examples.len();
    Ok((examples, report))
}

pub fn prepare_corpus(
    docs: &[AnnotatedDocument],
    tokenizer: &WordPiece,
    taxonomy: &Taxonomy,
    vocab: &ConceptVocab,
    max_len: usize,
) -> Result<(Vec<PretrainExample>, PrepareReport)> {
    let mut all = Vec::new();
    let mut total = PrepareReport::default();
    for doc in docs {
        let (ex, r) = prepare_document(doc, tokenizer, taxonomy, vocab, max_len)?;
        all.extend(ex);
        total.documents += r.documents;
        total.examples += r.examples;
        total.mentions_in += r.mentions_in;
        total.mentions_kept += r.mentions_kept;
        total.splits_token += r.splits_token;
        total.no_tokens += r.no_tokens;
        total.overlap += r.overlap;
        total.straddles += r.straddles;
        total.unknown_entities += r.unknown_entities;
    }
    Ok((all, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharMention, MentionSpan};
    use crate::taxonomy::Concept;
    use crate::tokenizer::RESERVED;

    fn tok() -> WordPiece {
        let mut v: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        v.extend(["a", "b", "c", "d", "e", "f"].map(String::from));
        WordPiece::from_tokens(v, "##", true).unwrap()
    }

    fn setup() -> (Taxonomy, ConceptVocab) {
        let tax = Taxonomy::from_pairs([("x", "k1"), ("y", "k2")]);
        let vocab = ConceptVocab::new(vec![Concept::new("k1", "k1"), Concept::new("k2", "k2")]).unwrap();
        (tax, vocab)
    }

    #[test]
    fn single_window_shifts_for_cls() {
        let (tax, vocab) = setup();
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: "a b c".into(),
            mentions: vec![CharMention { entity: "x".into(), start: 2, end: 3 }],
        };
        let (ex, rep) = prepare_document(&doc, &tok(), &tax, &vocab, 16).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].token_ids, vec![CLS, 5, 6, 7, SEP]);
        assert_eq!(ex[0].mentions[0].span, MentionSpan::new("x", 2, 2));
        assert_eq!(ex[0].mentions[0].target.hot, vec![true, false]);
        assert_eq!(rep.mentions_kept, 1);
    }

    #[test]
    fn straddling_mentions_dropped_from_both_windows() {
        let (tax, vocab) = setup();
        // tokens a b c d e f ; windows of 2 content tokens: [a b] [c d] [e f]
        let doc = AnnotatedDocument {
            doc_id: "d".into(),
            text: "a b c d e f".into(),
            mentions: vec![
                CharMention { entity: "x".into(), start: 2, end: 5 },
                CharMention { entity: "z".into(), start: 6, end: 7 },
                CharMention { entity: "y".into(), start: 8, end: 11 },
            ],
        };
        let (ex, rep) = prepare_document(&doc, &tok(), &tax, &vocab, 4).unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex[0].mentions.is_empty());
        assert_eq!(ex[1].mentions.len(), 1);
        assert_eq!(ex[1].mentions[0].span, MentionSpan::new("z", 2, 2));
        assert!(ex[1].mentions[0].target.unknown);
        assert_eq!(ex[2].mentions[0].span, MentionSpan::new("y", 1, 2));
        assert_eq!(rep.straddles, 1);
        assert_eq!(rep.unknown_entities, 1);
        assert!(ex.iter().all(|e| e.len() <= 4));
    }
}
