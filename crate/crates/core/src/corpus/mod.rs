//! Entity-annotated text, mention alignment, masking and batching.

mod align;
mod batch;
pub mod io;
mod masking;
mod prepare;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::ConceptTarget;

pub use align::{align_mentions, AlignReport, DropReason};
pub use batch::{build_batch, build_batches, BatchMention, PretrainBatch};
pub use masking::{apply_mlm_masking, mask_entities, mask_example, MaskingConfig, MlmCategory};
pub use prepare::{prepare_corpus, prepare_document, PrepareReport};

/// A character-offset entity mention, end exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharMention {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<CharMention>,
}

impl AnnotatedDocument {
    pub fn validate(&self) -> Result<()> {
        let n = self.text.chars().count();
        let mut prev = 0;
        for (k, m) in self.mentions.iter().enumerate() {
            if m.start >= m.end || m.end > n {
                return Err(Error::data(
                    format!("doc {} mention {k}", self.doc_id),
                    format!("offsets {}..{} invalid for text of {n} chars", m.start, m.end),
                ));
            }
            if m.start < prev {
                return Err(Error::data(
                    format!("doc {} mention {k}", self.doc_id),
                    "mentions not sorted by start",
                ));
            }
            prev = m.start;
        }
        Ok(())
    }

    /// Text covered by a mention.
    pub fn surface(&self, m: &CharMention) -> String {
        self.text.chars().skip(m.start).take(m.end - m.start).collect()
    }
}

/// A token span linked to an entity; `end` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MentionSpan {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

impl MentionSpan {
    pub fn new(entity: &str, start: usize, end: usize) -> Self {
        Self {
            entity: entity.to_string(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }

    pub fn overlaps(&self, other: &MentionSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn shifted(&self, offset: isize) -> MentionSpan {
        MentionSpan {
            entity: self.entity.clone(),
            start: (self.start as isize + offset) as usize,
            end: (self.end as isize + offset) as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleMention {
    pub span: MentionSpan,
    pub target: ConceptTarget,
    pub ecp_masked: bool,
}

/// One model input window with its supervision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainExample {
    /// Stable identity used to derive per-example random streams.
    pub key: String,
    pub token_ids: Vec<u32>,
    /// Original id at MLM-selected positions, `None` elsewhere.
    pub mlm_labels: Vec<Option<u32>>,
    pub mentions: Vec<ExampleMention>,
}

impl PretrainExample {
    pub fn new(key: String, token_ids: Vec<u32>, mentions: Vec<ExampleMention>) -> Self {
        let n = token_ids.len();
        Self {
            key,
            token_ids,
            mlm_labels: vec![None; n],
            mentions,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Whether `pos` lies inside a fully masked mention.
    pub fn in_masked_mention(&self, pos: usize) -> bool {
        self.mentions
            .iter()
            .any(|m| m.ecp_masked && m.span.contains(pos))
    }
}
