//! Zero-shot probes and fine-tuned downstream evaluations.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Result;
use concept_core::corpus::io::{read_corpus, write_jsonl};
use concept_core::evals::data::{read_names, read_triples, KGTriple, RelationRecord, Splits, TypingRecord};
use concept_core::evals::kgc::{link_prediction, triple_classification};
use concept_core::evals::{
    entity_similarity_report, finetune_entity_typing, finetune_relation_classification, mention_representations,
    zero_shot_concept_probe, RcMode, Task,
};
use concept_core::taxonomy::io::{read_id_list, read_taxonomy};
use serde::Serialize;

use super::{checkpoint_dir, finetune_config, load_checkpoint, read_splits, split_inputs, split_paths, Context};
use crate::cli::{FinetuneRc, FinetuneTyping, Kgc, Probe, Similarity};
use crate::Usage;

#[derive(Serialize)]
struct ProbeSettings {
    masked: bool,
    max_len: usize,
}

pub fn probe(ctx: &mut Context, a: Probe) -> Result<()> {
    ctx.leftover()?;
    let dir = checkpoint_dir(&a.checkpoint);
    let mut run = ctx.start(
        "probe",
        ctx.seed.unwrap_or(0),
        &[("checkpoint", &dir), ("docs", &a.docs), ("taxonomy", &a.taxonomy)],
    )?;
    let ck = load_checkpoint(&dir)?;
    let max_len = a.max_len.unwrap_or(ck.config.encoder.max_positions);
    let docs = read_corpus(&a.docs)?;
    let taxonomy = read_taxonomy(&a.taxonomy)?;
    let masked = !a.unmasked;
    let report = zero_shot_concept_probe(&ck.model, &ck.tokenizer, &docs, &taxonomy, &ck.vocab, masked, max_len)?;
    log::info!("micro F1 {:.4}, top-1 {:.4} over {} mentions", report.micro_f1, report.top1_acc, report.mentions);
    run.write_json("probe.json", &report)?;
    run.finish(&ProbeSettings { masked, max_len })?;
    Ok(())
}

pub fn similarity(ctx: &mut Context, a: Similarity) -> Result<()> {
    ctx.leftover()?;
    let dir = checkpoint_dir(&a.checkpoint);
    let mut run = ctx.start(
        "similarity-report",
        ctx.seed.unwrap_or(0),
        &[("checkpoint", &dir), ("docs", &a.docs), ("taxonomy", &a.taxonomy)],
    )?;
    let ck = load_checkpoint(&dir)?;
    let max_len = a.max_len.unwrap_or(ck.config.encoder.max_positions);
    let docs = read_corpus(&a.docs)?;
    let taxonomy = read_taxonomy(&a.taxonomy)?;
    let reps = mention_representations(&ck.model, &ck.tokenizer, &docs, &taxonomy, &ck.vocab, a.masked, max_len)?;
    let report = entity_similarity_report(&reps)?;
    run.write_json("similarity.json", &report)?;
    run.finish(&ProbeSettings { masked: a.masked, max_len })?;
    Ok(())
}

#[derive(Serialize)]
struct Metrics<D: Serialize> {
    task: &'static str,
    epoch_losses: Vec<f64>,
    dev: Option<D>,
    test: Option<D>,
}

#[derive(Serialize)]
struct Resolved<'a, C: Serialize> {
    task: &'static str,
    #[serde(flatten)]
    config: &'a C,
}

#[derive(Serialize)]
struct TypingPrediction<'a> {
    id: &'a str,
    predicted: &'a BTreeSet<String>,
    gold: &'a [String],
}

pub fn typing(ctx: &mut Context, a: FinetuneTyping) -> Result<()> {
    let (task, cfg) = finetune_config(ctx, &a.tune, Task::OpenEntity)?;
    let dir = checkpoint_dir(&a.tune.checkpoint);
    let paths = split_paths(&a.data, "jsonl");
    let labels_path = a.labels.clone().or_else(|| Some(a.data.join("labels.txt")).filter(|p| p.exists()));
    let mut inputs: Vec<(&str, &Path)> = vec![("checkpoint", &dir)];
    inputs.extend(split_inputs(&paths));
    if let Some(l) = &labels_path {
        inputs.push(("labels", l));
    }
    let mut run = ctx.start("finetune-typing", cfg.seed, &inputs)?;
    let ck = load_checkpoint(&dir)?;
    let splits: Splits<TypingRecord> = read_splits(&a.data)?;
    let labels: Vec<String> = match &labels_path {
        Some(p) => read_id_list(p)?.into_iter().collect(),
        None => splits.train.iter().flat_map(|r| r.labels.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let out = finetune_entity_typing(&ck.model.encoder, &ck.tokenizer, &splits, &labels, &cfg)?;
    let predictions: Vec<TypingPrediction> = splits
        .test
        .iter()
        .zip(&out.test_predictions)
        .map(|(r, p)| TypingPrediction { id: &r.id, predicted: p, gold: &r.labels })
        .collect();
    write_jsonl(&run.output("predictions.jsonl"), &predictions)?;
    run.write_json(
        "metrics.json",
        &Metrics { task: task.name(), epoch_losses: out.epoch_losses, dev: out.dev, test: out.test },
    )?;
    run.finish(&Resolved { task: task.name(), config: &cfg })?;
    Ok(())
}

#[derive(Serialize)]
struct RcPrediction<'a> {
    id: &'a str,
    predicted: &'a str,
    gold: &'a str,
}

#[derive(Serialize)]
struct RcResolved<'a, C: Serialize> {
    mode: RcMode,
    no_relation: &'a str,
    #[serde(flatten)]
    inner: Resolved<'a, C>,
}

pub fn relation(ctx: &mut Context, a: FinetuneRc) -> Result<()> {
    let mode: RcMode = a.mode.parse().map_err(|e: concept_core::Error| Usage(e.to_string()))?;
    let (task, cfg) = finetune_config(ctx, &a.tune, Task::Tacred)?;
    let dir = checkpoint_dir(&a.tune.checkpoint);
    let paths = split_paths(&a.data, "jsonl");
    let mut inputs: Vec<(&str, &Path)> = vec![("checkpoint", &dir)];
    inputs.extend(split_inputs(&paths));
    let mut run = ctx.start("finetune-rc", cfg.seed, &inputs)?;
    let ck = load_checkpoint(&dir)?;
    let splits: Splits<RelationRecord> = read_splits(&a.data)?;
    let out = finetune_relation_classification(&ck.model.encoder, &ck.tokenizer, &splits, mode, &a.no_relation, &cfg)?;
    let skipped: BTreeSet<&str> = out.skipped.test.iter().map(String::as_str).collect();
    let predictions: Vec<RcPrediction> = splits
        .test
        .iter()
        .filter(|r| !skipped.contains(r.id.as_str()))
        .zip(&out.test_predictions)
        .map(|(r, p)| RcPrediction { id: &r.id, predicted: p, gold: &r.relation })
        .collect();
    write_jsonl(&run.output("predictions.jsonl"), &predictions)?;
    #[derive(Serialize)]
    struct RcMetricsFile<M: Serialize> {
        #[serde(flatten)]
        metrics: M,
        relations: Vec<String>,
        skipped: concept_core::evals::data::SplitCounts,
    }
    run.write_json(
        "metrics.json",
        &RcMetricsFile {
            skipped: out.skipped.sizes(),
            relations: out.relations,
            metrics: Metrics { task: task.name(), epoch_losses: out.epoch_losses, dev: out.dev, test: out.test },
        },
    )?;
    run.finish(&RcResolved {
        mode,
        no_relation: &a.no_relation,
        inner: Resolved { task: task.name(), config: &cfg },
    })?;
    Ok(())
}

struct KgData {
    splits: Splits<KGTriple>,
    names: concept_core::evals::data::NameTable,
}

fn kg_inputs(a: &Kgc) -> [(&'static str, std::path::PathBuf); 4] {
    ["train", "dev", "test", "names"].map(|s| (s, a.data.join(format!("{s}.tsv"))))
}

fn read_kg(a: &Kgc) -> Result<KgData> {
    let [train, dev, test, names] = kg_inputs(a);
    Ok(KgData {
        splits: Splits { train: read_triples(&train.1)?, dev: read_triples(&dev.1)?, test: read_triples(&test.1)? },
        names: read_names(&names.1)?,
    })
}

fn kgc(ctx: &mut Context, a: Kgc, command: &'static str, default: Task) -> Result<()> {
    let (task, cfg) = finetune_config(ctx, &a.tune, default)?;
    let dir = checkpoint_dir(&a.tune.checkpoint);
    let files = kg_inputs(&a);
    let mut inputs: Vec<(&str, &Path)> = vec![("checkpoint", &dir)];
    inputs.extend(files.iter().map(|(r, p)| (*r, p.as_path())));
    let mut run = ctx.start(command, cfg.seed, &inputs)?;
    let ck = load_checkpoint(&dir)?;
    let kg = read_kg(&a)?;
    if default == Task::Fb15kTc {
        let out = triple_classification(&ck.model.encoder, &ck.tokenizer, &kg.splits, &kg.names, &cfg)?;
        if let Some(t) = &out.test {
            log::info!("test balanced accuracy {:.4}", t.balanced_accuracy);
        }
        run.write_json(
            "metrics.json",
            &Metrics { task: task.name(), epoch_losses: out.epoch_losses, dev: out.dev, test: out.test },
        )?;
    } else {
        let out = link_prediction(&ck.model.encoder, &ck.tokenizer, &kg.splits, &kg.names, &cfg)?;
        if let Some(t) = &out.test {
            log::info!("test MRR {:.4}, Hits@10 {:.4}", t.metrics.mrr, t.metrics.hits_at_10);
        }
        run.write_json(
            "metrics.json",
            &Metrics { task: task.name(), epoch_losses: out.epoch_losses, dev: out.dev, test: out.test },
        )?;
    }
    run.finish(&Resolved { task: task.name(), config: &cfg })?;
    Ok(())
}

pub fn triple_classification_cmd(ctx: &mut Context, a: Kgc) -> Result<()> {
    kgc(ctx, a, "kgc-tc", Task::Fb15kTc)
}

pub fn link_prediction_cmd(ctx: &mut Context, a: Kgc) -> Result<()> {
    kgc(ctx, a, "kgc-lp", Task::Fb15kLp)
}
