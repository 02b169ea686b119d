//! Dataset construction: synthetic worlds, taxonomy, concept selection,
//! corpus preparation and derived evaluation splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::Result;
use concept_core::corpus::io::{read_corpus, write_jsonl};
use concept_core::corpus::prepare_corpus;
use concept_core::evals::builders::{build_ckt_splits, build_figer_finer};
use concept_core::evals::data::{read_names, read_triples, write_names, write_triples, TypingRecord};
use concept_core::evals::FineTuneConfig;
use concept_core::pretrain::TrainConfig;
use concept_core::seed;
use concept_core::synth::{write_world, World, WorldSpec};
use concept_core::taxonomy::io::{
    read_counts, read_id_list, read_labels, read_merge, read_taxonomy, read_vocab, write_stats, write_taxonomy,
    write_text, write_vocab,
};
use concept_core::taxonomy::{
    build_stats, compute_mfe, extract_isa_triples, human_subjects, select_concepts, SelectionConfig, Taxonomy,
    WordFilter, WordFilterMode,
};
use concept_core::tokenizer::WordPiece;
use concept_core::Error;
use serde::{Deserialize, Serialize};

use super::{read_splits, split_inputs, split_paths, Context};
use crate::cli::{BuildCkt, BuildFigerFiner, BuildTaxonomy, PrepareCorpus, SelectConcepts};
use crate::config::overlay;
use crate::Usage;

/// Suggested pre-training settings for a default-sized world.
#[derive(Serialize)]
struct PretrainPreset {
    preset: &'static str,
    dropout: f64,
    #[serde(flatten)]
    train: TrainConfig,
}

pub fn synth(ctx: &mut Context) -> Result<()> {
    let keys = std::mem::take(&mut ctx.config);
    let mut spec = overlay(&WorldSpec::default(), &keys, "world")?;
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let mut run = ctx.start("synth", spec.seed, &[])?;
    let world = World::generate(&spec)?;
    let files = write_world(&world, &run.out)?;
    for f in &files.files {
        run.output(f);
    }

    let pretrain = PretrainPreset {
        preset: "desk",
        dropout: 0.0,
        train: TrainConfig { lr: 1e-3, max_len: 64, max_steps: 3000, seed: spec.seed, ..TrainConfig::default() },
    };
    let text = toml::to_string(&pretrain).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&run.output("pretrain.toml"), &text)?;
    let finetune = FineTuneConfig {
        lr: 3e-4,
        epochs: 10,
        batch_size: 32,
        max_len: 32,
        seed: spec.seed,
        ..FineTuneConfig::default()
    };
    let text = toml::to_string(&finetune).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&run.output("finetune.toml"), &text)?;
    run.finish(&spec)?;
    Ok(())
}

/// Feeds the lines of `path` to `f` without holding the file in memory; a
/// read error ends the stream and is returned.
fn with_lines<R>(path: &Path, f: impl FnOnce(&mut dyn Iterator<Item = String>) -> R) -> Result<R> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut failure = None;
    let mut lines = BufReader::new(file).lines().map_while(|l| l.map_err(|e| failure = Some(e)).ok());
    let out = f(&mut lines);
    drop(lines);
    match failure {
        Some(e) => Err(Error::io(path, e).into()),
        None => Ok(out),
    }
}

pub fn build_taxonomy(ctx: &mut Context, a: BuildTaxonomy) -> Result<()> {
    ctx.leftover()?;
    let seed = ctx.seed.unwrap_or(0);
    let mut run = ctx.start("build-taxonomy", seed, &[("dump", &a.dump), ("entities", &a.entities)])?;
    let entities: HashSet<String> = read_id_list(&a.entities)?.into_iter().collect();
    let humans = with_lines(&a.dump, |lines| human_subjects(lines, &a.sentinel))?;
    let (triples, report) = with_lines(&a.dump, |lines| extract_isa_triples(lines, &entities, &humans))?;

    let mut isa = String::new();
    for t in &triples {
        isa.push_str(&format!("{}\t{}\t{}\n", t.entity, t.property.as_str(), t.concept));
    }
    write_text(&run.output("isa.tsv"), &isa)?;
    let taxonomy = Taxonomy::from_triples(&triples);
    write_taxonomy(&run.output("taxonomy.tsv"), &taxonomy)?;
    run.write_json("extract_report.json", &report)?;
    log::info!(
        "kept {} of {} records: {} entities, {} concepts",
        report.kept,
        report.records,
        taxonomy.entities().len(),
        taxonomy.concepts().len()
    );
    run.finish(&serde_json::json!({ "sentinel": a.sentinel }))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectSettings {
    mfe_hi: u64,
    mfe_lo: u64,
    sfc_min: u64,
    word_filter: WordFilterMode,
}

impl Default for SelectSettings {
    fn default() -> Self {
        let d = SelectionConfig::default();
        Self { mfe_hi: d.mfe_hi, mfe_lo: d.mfe_lo, sfc_min: d.sfc_min, word_filter: WordFilterMode::Word }
    }
}

#[derive(Serialize)]
struct SelectReport {
    candidates: usize,
    selected: usize,
    merged: usize,
    pairs_before: usize,
    pairs_after: usize,
}

pub fn select(ctx: &mut Context, a: SelectConcepts) -> Result<()> {
    let keys = std::mem::take(&mut ctx.config);
    let mut settings = overlay(&SelectSettings::default(), &keys, "selection")?;
    if let Some(w) = &a.word_filter {
        settings.word_filter = match w.as_str() {
            "word" => WordFilterMode::Word,
            "token" => WordFilterMode::Token,
            _ => return Err(Usage(format!("unknown word filter {w:?} (word, token)")).into()),
        };
    }
    if settings.word_filter == WordFilterMode::Token && a.vocab.is_none() {
        return Err(Usage("the token word filter needs --vocab".into()).into());
    }
    let mut inputs: Vec<(&str, &Path)> =
        vec![("taxonomy", &a.taxonomy), ("mention_counts", &a.mention_counts), ("sfc", &a.sfc)];
    for (role, p) in [("labels", &a.labels), ("allow", &a.allow), ("deny", &a.deny), ("merge", &a.merge), ("vocab", &a.vocab)] {
        if let Some(p) = p {
            inputs.push((role, p));
        }
    }
    let mut run = ctx.start("select-concepts", ctx.seed.unwrap_or(0), &inputs)?;

    let taxonomy = read_taxonomy(&a.taxonomy)?;
    let counts = read_counts(&a.mention_counts)?;
    let sfc = read_counts(&a.sfc)?;
    let labels = a.labels.as_deref().map(read_labels).transpose()?.unwrap_or_default();
    let config = SelectionConfig {
        mfe_hi: settings.mfe_hi,
        mfe_lo: settings.mfe_lo,
        sfc_min: settings.sfc_min,
        allow: a.allow.as_deref().map(read_id_list).transpose()?.unwrap_or_default(),
        deny: a.deny.as_deref().map(read_id_list).transpose()?.unwrap_or_default(),
        merge: a.merge.as_deref().map(read_merge).transpose()?.unwrap_or_default(),
    };
    let tokenizer = a.vocab.as_deref().map(WordPiece::load).transpose()?;
    let filter = match (&settings.word_filter, &tokenizer) {
        (WordFilterMode::Token, Some(t)) => WordFilter::Token(t),
        _ => WordFilter::Word,
    };

    let mfe = compute_mfe(&taxonomy, &counts);
    let stats = build_stats(&taxonomy, &mfe, &sfc, &labels);
    write_stats(&run.output("stats.tsv"), &stats)?;
    let vocab = select_concepts(&stats, &config, &filter)?;
    write_vocab(&run.output("concepts.json"), &vocab)?;
    let remapped = taxonomy.remap(&config.merge);
    write_taxonomy(&run.output("taxonomy.tsv"), &remapped)?;
    let report = SelectReport {
        candidates: stats.len(),
        selected: vocab.len(),
        merged: config.merge.len(),
        pairs_before: taxonomy.num_pairs(),
        pairs_after: remapped.num_pairs(),
    };
    run.write_json("select_report.json", &report)?;
    log::info!("selected {} of {} concepts", report.selected, report.candidates);
    run.finish(&settings)?;
    Ok(())
}

#[derive(Serialize)]
struct PrepareSettings {
    max_len: usize,
}

pub fn prepare(ctx: &mut Context, a: PrepareCorpus) -> Result<()> {
    let i = a.inputs;
    let (Some(corpus), Some(taxonomy)) = (&i.corpus, &i.taxonomy) else {
        return Err(Usage("prepare-corpus needs --corpus and --taxonomy".into()).into());
    };
    let mut keys = std::mem::take(&mut ctx.config);
    let mut max_len = TrainConfig::default().max_len;
    if let Some(v) = keys.remove("max_len") {
        max_len = v
            .as_integer()
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Config(format!("max_len must be a non-negative integer, got {v}")))?;
    }
    ctx.config = keys;
    ctx.leftover()?;
    if let Some(m) = i.max_len {
        max_len = m;
    }
    let mut run = ctx.start(
        "prepare-corpus",
        ctx.seed.unwrap_or(0),
        &[("corpus", corpus), ("taxonomy", taxonomy), ("concepts", &i.concepts), ("vocab", &i.vocab)],
    )?;
    let docs = read_corpus(corpus)?;
    let tax = read_taxonomy(taxonomy)?;
    let vocab = read_vocab(&i.concepts)?;
    let tokenizer = WordPiece::load(&i.vocab)?;
    let (examples, report) = prepare_corpus(&docs, &tokenizer, &tax, &vocab, max_len)?;
    write_jsonl(&run.output("examples.jsonl"), &examples)?;
    run.write_json("prepare_report.json", &report)?;
    log::info!("{} examples from {} documents", examples.len(), docs.len());
    run.finish(&PrepareSettings { max_len })?;
    Ok(())
}

pub fn figer_finer(ctx: &mut Context, a: BuildFigerFiner) -> Result<()> {
    ctx.leftover()?;
    let paths = split_paths(&a.data, "jsonl");
    let mut run = ctx.start("build-figer-finer", ctx.seed.unwrap_or(0), &split_inputs(&paths))?;
    let splits = read_splits::<TypingRecord>(&a.data)?;
    let (finer, report) = build_figer_finer(&splits, a.threshold);
    write_jsonl(&run.output("train.jsonl"), &finer.train)?;
    write_jsonl(&run.output("dev.jsonl"), &finer.dev)?;
    write_jsonl(&run.output("test.jsonl"), &finer.test)?;
    run.write_json("finer_report.json", &report)?;
    log::info!("removed {} labels", report.removed_labels.len());
    run.finish(&serde_json::json!({ "threshold": a.threshold }))?;
    Ok(())
}

#[derive(Serialize)]
struct CktReport {
    requested: usize,
    groups: usize,
    shortfall: usize,
    train: usize,
    dev: usize,
    test: usize,
}

pub fn ckt(ctx: &mut Context, a: BuildCkt) -> Result<()> {
    ctx.leftover()?;
    let seed = ctx.seed.unwrap_or(0);
    let mut inputs: Vec<(&str, &Path)> = vec![("triples", &a.triples), ("taxonomy", &a.taxonomy)];
    if let Some(n) = &a.names {
        inputs.push(("names", n));
    }
    let mut run = ctx.start("build-ckt", seed, &inputs)?;
    let triples = read_triples(&a.triples)?;
    let taxonomy = read_taxonomy(&a.taxonomy)?;
    let out = build_ckt_splits(&triples, &taxonomy, a.groups, &mut seed::stream(seed, "ckt"));
    write_triples(&run.output("train.tsv"), &out.splits.train)?;
    write_triples(&run.output("dev.tsv"), &out.splits.dev)?;
    write_triples(&run.output("test.tsv"), &out.splits.test)?;
    write_jsonl(&run.output("groups.jsonl"), &out.groups)?;
    if let Some(n) = &a.names {
        write_names(&run.output("names.tsv"), &read_names(n)?)?;
    }
    let sizes = out.splits.sizes();
    run.write_json(
        "ckt_report.json",
        &CktReport {
            requested: a.groups,
            groups: out.groups.len(),
            shortfall: out.shortfall,
            train: sizes.train,
            dev: sizes.dev,
            test: sizes.test,
        },
    )?;
    run.finish(&serde_json::json!({ "groups": a.groups }))?;
    Ok(())
}
