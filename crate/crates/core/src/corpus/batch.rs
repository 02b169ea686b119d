use super::{MentionSpan, PretrainExample};
use crate::error::{Error, Result};
use crate::taxonomy::ConceptTarget;
use crate::tokenizer::PAD;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchMention {
    pub row: usize,
    pub span: MentionSpan,
    pub target: ConceptTarget,
    pub ecp_masked: bool,
}

/// Row-major stacked examples padded to a common width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainBatch {
    pub rows: usize,
    pub width: usize,
    pub token_ids: Vec<u32>,
    pub mlm_labels: Vec<Option<u32>>,
    /// `true` at real tokens, `false` at padding.
    pub attention: Vec<bool>,
    pub lengths: Vec<usize>,
    pub mentions: Vec<BatchMention>,
    pub keys: Vec<String>,
}

impl PretrainBatch {
    pub fn row_tokens(&self, r: usize) -> &[u32] {
        &self.token_ids[r * self.width..(r + 1) * self.width]
    }

    pub fn row_labels(&self, r: usize) -> &[Option<u32>] {
        &self.mlm_labels[r * self.width..(r + 1) * self.width]
    }

    pub fn row_attention(&self, r: usize) -> &[bool] {
        &self.attention[r * self.width..(r + 1) * self.width]
    }

    pub fn mentions_in_row(&self, r: usize) -> impl Iterator<Item = &BatchMention> {
        self.mentions.iter().filter(move |m| m.row == r)
    }

    /// Recovers row `r` as an example (without padding).
    pub fn row_example(&self, r: usize) -> PretrainExample {
        let n = self.lengths[r];
        PretrainExample {
            key: self.keys[r].clone(),
            token_ids: self.row_tokens(r)[..n].to_vec(),
            mlm_labels: self.row_labels(r)[..n].to_vec(),
            mentions: self
                .mentions_in_row(r)
                .map(|m| super::ExampleMention {
                    span: m.span.clone(),
                    target: m.target.clone(),
                    ecp_masked: m.ecp_masked,
                })
                .collect(),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.mlm_labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Truncates each example to `max_len` (dropping mentions that no longer
/// fit), pads to the longest row and stacks. Deterministic in input order.
pub fn build_batch(examples: &[PretrainExample], max_len: usize) -> Result<PretrainBatch> {
    if examples.is_empty() {
        return Err(Error::arg("batch needs at least one example"));
    }
    if max_len == 0 {
        return Err(Error::arg("max_len must be positive"));
    }
    let lengths: Vec<usize> = examples.iter().map(|e| e.len().min(max_len)).collect();
    let width = lengths.iter().copied().max().unwrap_or(0).max(1);
    let rows = examples.len();
    let mut token_ids = vec![PAD; rows * width];
    let mut mlm_labels = vec![None; rows * width];
    let mut attention = vec![false; rows * width];
    let mut mentions = Vec::new();
    for (r, ex) in examples.iter().enumerate() {
        let n = lengths[r];
        let base = r * width;
        token_ids[base..base + n].copy_from_slice(&ex.token_ids[..n]);
        mlm_labels[base..base + n].copy_from_slice(&ex.mlm_labels[..n]);
        attention[base..base + n].fill(true);
        for m in &ex.mentions {
            if m.span.end < n {
                mentions.push(BatchMention {
                    row: r,
                    span: m.span.clone(),
                    target: m.target.clone(),
                    ecp_masked: m.ecp_masked,
                });
            }
        }
    }
    Ok(PretrainBatch {
        rows,
        width,
        token_ids,
        mlm_labels,
        attention,
        lengths,
        mentions,
        keys: examples.iter().map(|e| e.key.clone()).collect(),
    })
}

/// Consecutive batches of `batch_size` (the last may be smaller).
pub fn build_batches(
    examples: &[PretrainExample],
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<PretrainBatch>> {
    if batch_size < 1 {
        return Err(Error::arg("batch_size must be at least 1"));
    }
    examples
        .chunks(batch_size)
        .map(|c| build_batch(c, max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{mask_example, ExampleMention, MaskingConfig};
    use crate::tokenizer::{WordPiece, CLS, RESERVED, SEP};
    use proptest::prelude::*;

    fn ex(key: &str, n: usize, spans: &[(usize, usize)]) -> PretrainExample {
        let mut ids = vec![CLS];
        ids.extend((0..n).map(|i| 5 + (i % 7) as u32));
        ids.push(SEP);
        let mentions = spans
            .iter()
            .map(|&(s, e)| ExampleMention {
                span: MentionSpan::new("e", s, e),
                target: ConceptTarget { hot: vec![true, false], unknown: false },
                ecp_masked: false,
            })
            .collect();
        PretrainExample::new(key.into(), ids, mentions)
    }

    #[test]
    fn pads_and_marks_attention() {
        let b = build_batch(&[ex("a", 3, &[(1, 2)]), ex("b", 1, &[])], 512).unwrap();
        assert_eq!((b.rows, b.width), (2, 5));
        assert_eq!(b.row_attention(1), &[true, true, true, false, false]);
        assert_eq!(&b.row_tokens(1)[3..], &[PAD, PAD]);
        assert!(b.row_labels(1).iter().all(Option::is_none));
        assert_eq!(b.mentions.len(), 1);
    }

    #[test]
    fn truncation_drops_mentions() {
        let b = build_batch(&[ex("a", 10, &[(1, 2), (4, 6)])], 5).unwrap();
        assert_eq!(b.width, 5);
        assert_eq!(b.mentions.len(), 1);
        assert_eq!(b.mentions[0].span.end, 2);
    }

    #[test]
    fn identical_examples_identical_rows() {
        let e = ex("a", 4, &[(1, 1)]);
        let b = build_batch(&[e.clone(), e], 512).unwrap();
        assert_eq!(b.row_tokens(0), b.row_tokens(1));
        assert_eq!(b.row_labels(0), b.row_labels(1));
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(build_batches(&[ex("a", 1, &[])], 8, 0).is_err());
        assert!(build_batch(&[], 8).is_err());
        assert_eq!(build_batches(&[ex("a", 1, &[]), ex("b", 1, &[]), ex("c", 1, &[])], 8, 2).unwrap().len(), 2);
    }

    proptest! {
        #[test]
        fn masking_commutes_with_batching(seed in 0u64..1000, lens in prop::collection::vec(2usize..12, 1..6)) {
            let mut v: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
            v.extend((0..10).map(|i| format!("w{i}")));
            let tok = WordPiece::from_tokens(v, "##", true).unwrap();
            let exs: Vec<_> = lens.iter().enumerate().map(|(i, &n)| ex(&format!("k{i}"), n, &[(1, 1), (2, n)])).collect();
            let cfg = MaskingConfig { entity_rate: 0.3, mlm_rate: 0.3 };
            let masked: Vec<_> = exs.iter().map(|e| mask_example(e, &cfg, seed, 0, &tok).unwrap()).collect();
            let a = build_batch(&masked, 64).unwrap();
            let plain = build_batch(&exs, 64).unwrap();
            let rows: Vec<_> = (0..plain.rows).map(|r| mask_example(&plain.row_example(r), &cfg, seed, 0, &tok).unwrap()).collect();
            let b = build_batch(&rows, 64).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
