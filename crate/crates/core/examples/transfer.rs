//! Pre-trains with and without the concept objective on the synthetic world
//! and compares zero-shot concept prediction on held-out entities, mention
//! similarity and knowledge graph completion.
//!
//! `cargo run --release -p concept-core --example transfer -- [steps] [lr] [neutral_fraction] [name_signal]`

use std::time::Instant;

use concept_core::corpus::{prepare_corpus, AnnotatedDocument, CharMention};
use concept_core::evals::kgc::{link_prediction, triple_classification};
use concept_core::evals::{entity_similarity_report, mention_representations, zero_shot_concept_probe, FineTuneConfig};
use concept_core::model::{ConceptModel, EncoderConfig};
use concept_core::pretrain::{TrainConfig, Trainer};
use concept_core::synth::{World, WorldSpec};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> concept_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = arg(&args, 1, 3000);
    let lr: f64 = arg(&args, 2, 1e-3);
    let defaults = WorldSpec::default();
    let spec = WorldSpec {
        neutral_fraction: arg(&args, 3, defaults.neutral_fraction),
        name_signal: arg(&args, 4, defaults.name_signal),
        ..defaults
    };
    let world = World::generate(&spec)?;
    let tax = &world.taxonomy;
    let tok = &tax.tokenizer;
    let names_only: Vec<AnnotatedDocument> = tax
        .entities
        .iter()
        .filter(|e| e.heldout)
        .map(|e| AnnotatedDocument {
            doc_id: e.id.clone(),
            text: format!("{} .", e.name),
            mentions: vec![CharMention { entity: e.id.clone(), start: 0, end: e.name.chars().count() }],
        })
        .collect();
    let (examples, _) = prepare_corpus(&world.corpus.train, tok, &tax.taxonomy, &tax.vocab, 64)?;
    let mut enc = EncoderConfig::desk(tok.len());
    enc.dropout = 0.0;
    for lambda in [1.0, 0.0] {
        let cfg = TrainConfig { lr, max_steps: steps, lambda, seed: 7, ..Default::default() };
        let model = ConceptModel::<f32>::new(&enc, tax.vocab.len(), cfg.seed)?;
        let mut trainer = Trainer::new(model, &examples, tok, cfg)?;
        let t = Instant::now();
        for _ in 0..steps {
            trainer.step()?;
        }
        println!("lambda {lambda}: pretrained in {:.1}s", t.elapsed().as_secs_f64());
        let probe = |docs: &[AnnotatedDocument], masked| {
            zero_shot_concept_probe(&trainer.model, tok, docs, &tax.taxonomy, &tax.vocab, masked, 64).map(|r| r.top1_acc)
        };
        println!(
            "  held-out top1: masked {:.3} unmasked {:.3} name-only {:.3}",
            probe(&world.corpus.eval, true)?,
            probe(&world.corpus.eval, false)?,
            probe(&names_only, false)?
        );
        let reps = mention_representations(&trainer.model, tok, &world.corpus.eval, &tax.taxonomy, &tax.vocab, false, 64)?;
        println!("  similarity gap {:.3}", entity_similarity_report(&reps)?.gap);
        let ft = FineTuneConfig { lr: 3e-4, epochs: 10, batch_size: 32, max_len: 32, seed: 7, ..Default::default() };
        let tc = triple_classification(&trainer.model.encoder, tok, &world.kg.splits, &world.kg.names, &ft)?;
        let lp = link_prediction(&trainer.model.encoder, tok, &world.kg.splits, &world.kg.names, &ft)?;
        let lp = lp.test.expect("test split is non-empty");
        println!(
            "  tc accuracy {:.3}  lp hits@10 {:.3} (random {:.3}) mrr {:.3}",
            tc.test.expect("test split is non-empty").accuracy,
            lp.metrics.hits_at_10,
            lp.random_hits_at_10,
            lp.metrics.mrr
        );
    }
    Ok(())
}
