//! Concept-enhanced encoder pre-training.
//!
//! A taxonomy of entity-concept memberships supplies multi-label targets for
//! an entity concept prediction head trained jointly with masked language
//! modeling. The crate covers taxonomy construction, corpus preparation and
//! masking, a small transformer with hand-written gradients, the training
//! loop, downstream evaluations and a synthetic world generator.

pub mod corpus;
pub mod error;
pub mod evals;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod taxonomy;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Model32 = model::ConceptModel<f32>;
pub type Model64 = model::ConceptModel<f64>;
