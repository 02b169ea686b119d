//! Triple classification, link prediction and transfer-group mining on the
//! synthetic knowledge graph, starting from a concept-pretrained encoder.
//!
//! `cargo run --release -p concept-core --example kgc -- [ckpt_dir] [epochs] [lr]`

use std::path::PathBuf;
use std::time::Instant;

use concept_core::corpus::prepare_corpus;
use concept_core::evals::builders::{build_ckt_splits, ckt_violations};
use concept_core::evals::kgc::{link_prediction, triple_classification};
use concept_core::evals::FineTuneConfig;
use concept_core::model::checkpoint::load_model;
use concept_core::model::{save_model, ConceptModel, EncoderConfig};
use concept_core::pretrain::{TrainConfig, Trainer};
use concept_core::seed;
use concept_core::synth::{World, WorldSpec};

fn main() -> concept_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "/tmp/kgc-ckpt".into()));
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let world = World::generate(&WorldSpec::default())?;
    let tax = &world.taxonomy;
    let tok = &tax.tokenizer;
    let t = Instant::now();
    let model: ConceptModel<f32> = if dir.exists() {
        load_model(&dir)?.0
    } else {
        let (examples, _) = prepare_corpus(&world.corpus.train, tok, &tax.taxonomy, &tax.vocab, 64)?;
        let mut enc = EncoderConfig::desk(tok.len());
        enc.dropout = 0.0;
        let cfg = TrainConfig { lr: 1e-3, max_steps: 3000, lambda: 1.0, seed: 7, ..Default::default() };
        let mut trainer = Trainer::new(ConceptModel::new(&enc, tax.vocab.len(), 7)?, &examples, tok, cfg)?;
        for _ in 0..3000 {
            trainer.step()?;
        }
        let ids: Vec<String> = tax.vocab.concepts().iter().map(|c| c.id.clone()).collect();
        save_model(&dir, &trainer.model, &ids, Some(tok))?;
        trainer.model
    };
    println!("encoder ready ({:.1}s)", t.elapsed().as_secs_f64());
    let kg = &world.kg;
    println!("kg sizes {:?}", kg.splits.sizes());
    let cfg = FineTuneConfig { lr, epochs, batch_size: 32, max_len: 32, seed: 7, ..Default::default() };
    let t = Instant::now();
    let tc = triple_classification(&model.encoder, tok, &kg.splits, &kg.names, &cfg)?;
    println!("tc losses {:?}\ntc dev {:?}\ntc test {:?} ({:.1}s)", tc.epoch_losses, tc.dev, tc.test, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let lp_cfg = FineTuneConfig { batch_size: 64, ..cfg.clone() };
    let lp = link_prediction(&model.encoder, tok, &kg.splits, &kg.names, &lp_cfg)?;
    println!("lp losses {:?}\nlp test {:?} ({:.1}s)", lp.epoch_losses, lp.test, t.elapsed().as_secs_f64());
    let ckt = build_ckt_splits(&kg.triples, &tax.taxonomy, 1000, &mut seed::stream(7, "ckt"));
    println!("ckt groups {} violations {}", ckt.groups.len(), ckt_violations(&ckt.groups, &tax.taxonomy).len());
    Ok(())
}
