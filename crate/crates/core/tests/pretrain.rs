mod common;

use std::fs;

use concept_core::model::checkpoint::{load_model, MODEL_FILE};
use concept_core::model::{ConceptModel, Params};
use concept_core::pretrain::{pretrain, read_metrics_log, TrainConfig, Trainer, METRICS_FILE};
use tempfile::tempdir;

use common::{small_config, small_world};

fn config(max_steps: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        max_steps,
        seed: 11,
        log_interval: 1,
        checkpoint_interval: 5,
        max_len: 32,
        ..Default::default()
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let ra = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(10), a.path(), false).unwrap();
    let rb = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(10), b.path(), false).unwrap();
    assert_eq!(ra.history.len(), 10);
    for (x, y) in ra.history.iter().zip(&rb.history) {
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "step {}", x.step);
        assert_eq!(x.mlm.to_bits(), y.mlm.to_bits());
        assert_eq!(x.ecp.to_bits(), y.ecp.to_bits());
    }
    let bytes = |r: &concept_core::pretrain::PretrainOutcome| fs::read(r.checkpoint.join(MODEL_FILE)).unwrap();
    assert_eq!(bytes(&ra), bytes(&rb));

    let other = tempdir().unwrap();
    let rc = pretrain::<f32>(
        &examples,
        &tax.tokenizer,
        &tax.vocab,
        &enc,
        &TrainConfig { seed: 12, ..config(10) },
        other.path(),
        false,
    )
    .unwrap();
    assert_ne!(rc.history[0].total, ra.history[0].total);
}

#[test]
fn zero_lambda_ignores_the_concept_head() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let cfg = TrainConfig { lambda: 0.0, ..config(15) };
    let base = ConceptModel::<f32>::new(&enc, tax.vocab.len(), cfg.seed).unwrap();
    let mut other = base.clone();
    other.ecp.initialize(99, 0.5);

    let mut t1 = Trainer::new(base.clone(), &examples, &tax.tokenizer, cfg.clone()).unwrap();
    let mut t2 = Trainer::new(other.clone(), &examples, &tax.tokenizer, cfg).unwrap();
    for _ in 0..15 {
        let m1 = t1.step().unwrap();
        let m2 = t2.step().unwrap();
        assert_eq!(m1.mlm.to_bits(), m2.mlm.to_bits());
        assert_eq!(m1.total.to_bits(), m1.mlm.to_bits());
    }
    assert_eq!(t1.model.encoder, t2.model.encoder);
    assert_eq!(t1.model.mlm, t2.model.mlm);
    assert_eq!(t1.model.ecp, base.ecp);
    assert_eq!(t2.model.ecp, other.ecp);
    assert_ne!(t1.model.encoder, base.encoder);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let straight = tempdir().unwrap();
    let full = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(12), straight.path(), false).unwrap();

    let split = tempdir().unwrap();
    let first = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(5), split.path(), false).unwrap();
    assert_eq!(first.history.len(), 5);
    let rest = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(12), split.path(), true).unwrap();
    assert_eq!(rest.resumed_from, Some(5));
    assert_eq!(rest.history, full.history[5..]);
    assert_eq!(
        fs::read(full.checkpoint.join(MODEL_FILE)).unwrap(),
        fs::read(rest.checkpoint.join(MODEL_FILE)).unwrap()
    );
    let log = read_metrics_log(&split.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log, full.history);

    let changed = TrainConfig { lr: 5e-4, ..config(12) };
    assert!(pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &changed, split.path(), true).is_err());
}

#[test]
fn zero_steps_write_only_the_initial_checkpoint() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let dir = tempdir().unwrap();
    let out = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(0), dir.path(), false).unwrap();
    assert!(out.history.is_empty());
    assert!(read_metrics_log(&out.metrics_log).unwrap().is_empty());
    let (model, cfg) = load_model::<f32>(&out.checkpoint).unwrap();
    assert_eq!(model, ConceptModel::<f32>::new(&enc, tax.vocab.len(), 11).unwrap());
    assert_eq!(cfg.concepts, tax.vocab.ids());
}

#[test]
fn log_has_one_line_per_interval_plus_the_last_step() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let dir = tempdir().unwrap();
    let cfg = TrainConfig { log_interval: 5, ..config(23) };
    let out = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &cfg, dir.path(), false).unwrap();
    let steps: Vec<u64> = read_metrics_log(&out.metrics_log).unwrap().iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![5, 10, 15, 20, 23]);
    assert_eq!(steps.len() as u64, 23u64.div_ceil(5));
}

#[test]
fn loss_falls_over_two_hundred_steps() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let model = ConceptModel::<f32>::new(&enc, tax.vocab.len(), 3).unwrap();
    let mut t = Trainer::new(model, &examples, &tax.tokenizer, TrainConfig { batch_size: 16, ..config(200) }).unwrap();
    let totals: Vec<f64> = (0..200).map(|_| t.step().unwrap().total).collect();
    let head: f64 = totals[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = totals[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.8 * head, "first {head:.3} last {tail:.3}");
}

#[test]
fn unwritable_output_is_fatal_before_training() {
    let (world, examples) = small_world();
    let tax = &world.taxonomy;
    let enc = small_config(tax.tokenizer.len());
    let dir = tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = pretrain::<f32>(&examples, &tax.tokenizer, &tax.vocab, &enc, &config(3), &blocker.join("out"), false)
        .unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}
