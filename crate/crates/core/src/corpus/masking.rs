use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::PretrainExample;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tokenizer::{WordPiece, MASK};

/// What MLM masking did to a selected position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlmCategory {
    Masked,
    Random,
    Kept,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    /// Probability that a mention is masked entirely.
    pub entity_rate: f64,
    /// Probability that an eligible position is selected for MLM.
    pub mlm_rate: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            entity_rate: 0.15,
            mlm_rate: 0.15,
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::arg(format!("masking rate {rate} outside [0, 1]")))
    }
}

/// Independently masks each mention with probability `rate`: every token of
/// a selected mention becomes `[MASK]`, span length is preserved.
pub fn mask_entities(example: &PretrainExample, rate: f64, rng: &mut Rng) -> Result<PretrainExample> {
    check_rate(rate)?;
    let mut out = example.clone();
    for m in out.mentions.iter_mut() {
        let draw: f64 = rng.random();
        if m.ecp_masked || draw >= rate {
            continue;
        }
        m.ecp_masked = true;
        out.token_ids[m.span.start..=m.span.end].fill(MASK);
    }
    Ok(out)
}

/// BERT-style token masking over positions that are neither special tokens
/// nor inside an entity-masked mention. Selected positions are replaced by
/// `[MASK]` (80%), a random ordinary token (10%) or kept (10%), and record
/// their original id as label.
pub fn apply_mlm_masking(
    example: &PretrainExample,
    rate: f64,
    rng: &mut Rng,
    tokenizer: &WordPiece,
) -> Result<PretrainExample> {
    Ok(apply_mlm_masking_traced(example, rate, rng, tokenizer)?.0)
}

pub(crate) fn apply_mlm_masking_traced(
    example: &PretrainExample,
    rate: f64,
    rng: &mut Rng,
    tokenizer: &WordPiece,
) -> Result<(PretrainExample, Vec<(usize, MlmCategory)>)> {
    check_rate(rate)?;
    let ordinary = tokenizer.ordinary_ids();
    let mut out = example.clone();
    let mut trace = Vec::new();
    for pos in 0..out.token_ids.len() {
        let id = out.token_ids[pos];
        if tokenizer.is_special(id) || out.in_masked_mention(pos) || out.mlm_labels[pos].is_some() {
            continue;
        }
        let select: f64 = rng.random();
        if select >= rate {
            continue;
        }
        let kind: f64 = rng.random();
        let category = if kind < 0.8 {
            out.token_ids[pos] = MASK;
            MlmCategory::Masked
        } else if kind < 0.9 && !ordinary.is_empty() {
            out.token_ids[pos] = ordinary[rng.random_range(0..ordinary.len())];
            MlmCategory::Random
        } else {
            MlmCategory::Kept
        };
        out.mlm_labels[pos] = Some(id);
        trace.push((pos, category));
    }
    Ok((out, trace))
}

/// Entity masking then MLM masking, each from its own stream derived from
/// `(seed, example key, epoch)`, so the result does not depend on which
/// other examples are processed or in what order.
pub fn mask_example(
    example: &PretrainExample,
    config: &MaskingConfig,
    seed: u64,
    epoch: u64,
    tokenizer: &WordPiece,
) -> Result<PretrainExample> {
    let mut ent = seed::substream(seed, "entity-mask", &example.key, epoch);
    let mut mlm = seed::substream(seed, "mlm-mask", &example.key, epoch);
    let masked = mask_entities(example, config.entity_rate, &mut ent)?;
    apply_mlm_masking(&masked, config.mlm_rate, &mut mlm, tokenizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ExampleMention, MentionSpan};
    use crate::taxonomy::ConceptTarget;
    use crate::tokenizer::{CLS, RESERVED, SEP};
    use proptest::prelude::*;

    fn tok() -> WordPiece {
        let mut v: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        v.extend((0..20).map(|i| format!("w{i}")));
        WordPiece::from_tokens(v, "##", true).unwrap()
    }

    fn mention(s: usize, e: usize) -> ExampleMention {
        ExampleMention {
            span: MentionSpan::new("e", s, e),
            target: ConceptTarget { hot: vec![true], unknown: false },
            ecp_masked: false,
        }
    }

    fn example() -> PretrainExample {
        PretrainExample::new(
            "k".into(),
            vec![CLS, 5, 6, 7, 8, 9, 10, 11, SEP],
            vec![mention(1, 2), mention(4, 6)],
        )
    }

    #[test]
    fn entity_rate_extremes() {
        let ex = example();
        let mut rng = seed::stream(1, "t");
        assert_eq!(mask_entities(&ex, 0.0, &mut rng).unwrap(), ex);
        let all = mask_entities(&ex, 1.0, &mut rng).unwrap();
        for m in &all.mentions {
            assert!(m.ecp_masked);
            assert!(all.token_ids[m.span.start..=m.span.end].iter().all(|&t| t == MASK));
        }
        assert_eq!(all.token_ids[3], 7);
        assert!(mask_entities(&ex, 1.5, &mut rng).is_err());
    }

    #[test]
    fn mlm_rate_zero_labels_nothing() {
        let ex = example();
        let out = apply_mlm_masking(&ex, 0.0, &mut seed::stream(2, "t"), &tok()).unwrap();
        assert!(out.mlm_labels.iter().all(Option::is_none));
        assert_eq!(out.token_ids, ex.token_ids);
    }

    #[test]
    fn masked_position_carries_original_label() {
        let ex = example();
        let (out, trace) = apply_mlm_masking_traced(&ex, 1.0, &mut seed::stream(3, "t"), &tok()).unwrap();
        for (pos, cat) in trace {
            assert_eq!(out.mlm_labels[pos], Some(ex.token_ids[pos]));
            if cat == MlmCategory::Masked {
                assert_eq!(out.token_ids[pos], MASK);
            }
        }
        assert!(out.mlm_labels[0].is_none());
        assert!(out.mlm_labels[8].is_none());
    }

    #[test]
    fn masked_fraction_near_rate() {
        // 10_000 mentions; binomial sd = sqrt(.15 * .85 / 1e4) ~ 0.0036
        let mentions: Vec<_> = (0..10_000).map(|i| mention(i + 1, i + 1)).collect();
        let mut ids = vec![CLS];
        ids.extend(std::iter::repeat_n(5, 10_000));
        ids.push(SEP);
        let ex = PretrainExample::new("big".into(), ids, mentions);
        let out = mask_entities(&ex, 0.15, &mut seed::stream(4, "t")).unwrap();
        let frac = out.mentions.iter().filter(|m| m.ecp_masked).count() as f64 / 10_000.0;
        assert!((frac - 0.15).abs() <= 0.01, "{frac}");
    }

    proptest! {
        #[test]
        fn no_overlap_and_reconstruction(seed in 0u64..500, er in 0.0f64..=1.0, mr in 0.0f64..=1.0) {
            let ex = example();
            let cfg = MaskingConfig { entity_rate: er, mlm_rate: mr };
            let out = mask_example(&ex, &cfg, seed, 0, &tok()).unwrap();
            for pos in 0..out.len() {
                let in_masked = out.in_masked_mention(pos);
                prop_assert!(!(in_masked && out.mlm_labels[pos].is_some()));
                if out.mlm_labels[pos].is_none() && !in_masked {
                    prop_assert_eq!(out.token_ids[pos], ex.token_ids[pos]);
                }
                if let Some(orig) = out.mlm_labels[pos] {
                    prop_assert_eq!(orig, ex.token_ids[pos]);
                }
            }
        }
    }
}
