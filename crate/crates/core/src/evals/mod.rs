//! Downstream evaluations and dataset builders.

pub mod builders;
pub mod data;
pub mod finetune;
pub mod kgc;
pub mod metrics;
pub mod probe;
pub mod relation;
pub mod similarity;
pub mod typing;

pub use finetune::{FineTuneConfig, Task};
pub use metrics::{rc_metrics, typing_metrics, RankingMetrics, RcMetrics, TypingMetrics};
pub use probe::{zero_shot_concept_probe, ProbeReport};
pub use relation::{finetune_relation_classification, RcMode};
pub use similarity::{entity_similarity_report, mention_representations, SimilarityReport};
pub use typing::finetune_entity_typing;
