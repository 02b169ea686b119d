use serde::Serialize;

use super::{AnnotatedDocument, MentionSpan};
use crate::tokenizer::{Token, WordPiece};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The mention starts or ends inside a token.
    SplitsToken,
    /// No token falls inside the mention.
    NoTokens,
    /// Lost to a longer (or equally long, earlier) overlapping mention.
    Overlap,
    /// Crosses a window boundary or the truncation point.
    Straddles,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AlignReport {
    /// `(mention index in the document, reason)`.
    pub dropped: Vec<(usize, DropReason)>,
}

impl AlignReport {
    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|(_, r)| *r == reason).count()
    }
}

/// Maps character mentions onto the minimal covering token spans of
/// `tokens` (indices into `tokens`, no special tokens added).
pub(crate) fn align_to_tokens(
    doc: &AnnotatedDocument,
    tokens: &[Token],
) -> (Vec<MentionSpan>, AlignReport) {
    let mut report = AlignReport::default();
    let mut candidates: Vec<(usize, MentionSpan)> = Vec::new();
    for (k, m) in doc.mentions.iter().enumerate() {
        let first = tokens.partition_point(|t| t.end <= m.start);
        let last = tokens.partition_point(|t| t.start < m.end);
        if first >= last {
            report.dropped.push((k, DropReason::NoTokens));
            continue;
        }
        let (i, j) = (first, last - 1);
        if tokens[i].start < m.start || tokens[j].end > m.end {
            report.dropped.push((k, DropReason::SplitsToken));
            continue;
        }
        candidates.push((k, MentionSpan::new(&m.entity, i, j)));
    }
    // longest first, then earliest
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(candidates[c].1.len()), candidates[c].1.start, c));
    let mut kept: Vec<usize> = Vec::new();
    for c in order {
        if kept.iter().any(|&o| candidates[o].1.overlaps(&candidates[c].1)) {
            report.dropped.push((candidates[c].0, DropReason::Overlap));
        } else {
            kept.push(c);
        }
    }
    kept.sort_by_key(|&c| (candidates[c].1.start, c));
    report.dropped.sort();
    (kept.into_iter().map(|c| candidates[c].1.clone()).collect(), report)
}

/// Aligns a document's mentions to token spans of its tokenization.
pub fn align_mentions(doc: &AnnotatedDocument, tokenizer: &WordPiece) -> (Vec<MentionSpan>, AlignReport) {
    align_to_tokens(doc, &tokenizer.encode(&doc.text))
}
