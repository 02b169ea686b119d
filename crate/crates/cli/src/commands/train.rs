use std::path::Path;

use anyhow::Result;
use concept_core::corpus::io::{read_corpus, read_jsonl};
use concept_core::corpus::{prepare_corpus, PretrainExample};
use concept_core::model::EncoderConfig;
use concept_core::pretrain::{pretrain as run_pretrain, TrainConfig};
use concept_core::taxonomy::io::{read_taxonomy, read_vocab};
use concept_core::tokenizer::WordPiece;
use concept_core::Error;
use serde::Serialize;

use super::Context;
use crate::cli::Pretrain;
use crate::config::{overlay, take_known, take_string};
use crate::Usage;

#[derive(Serialize)]
struct Resolved<'a> {
    preset: &'a str,
    encoder: &'a EncoderConfig,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct Summary {
    examples: usize,
    resumed_from: Option<u64>,
    steps_run: usize,
    final_step: Option<u64>,
    final_mlm: Option<f64>,
    final_ecp: Option<f64>,
    final_total: Option<f64>,
}

pub fn pretrain(ctx: &mut Context, a: Pretrain) -> Result<()> {
    let tokenizer_path = a.inputs.vocab.clone();
    let preset = take_string(&mut ctx.config, "preset")?.unwrap_or_else(|| "desk".into());
    let base = match preset.as_str() {
        "desk" => EncoderConfig::desk(0),
        "base" => EncoderConfig::base(0),
        other => return Err(Error::Config(format!("unknown encoder preset {other:?} (desk, base)")).into()),
    };
    if ctx.config.contains_key("vocab_size") {
        return Err(Error::Config("vocab_size comes from the tokenizer vocabulary".into()).into());
    }
    let encoder_keys = take_known(&base, &mut ctx.config)?;
    let train_keys = std::mem::take(&mut ctx.config);
    let mut train = overlay(&TrainConfig::default(), &train_keys, "training")?;
    if let Some(v) = a.max_steps {
        train.max_steps = v;
    }
    if let Some(v) = a.lambda {
        train.lambda = v;
    }
    if let Some(v) = a.inputs.max_len {
        train.max_len = v;
    }
    if let Some(v) = ctx.seed {
        train.seed = v;
    }
    train.validate()?;

    let mut inputs: Vec<(&str, &Path)> = vec![("concepts", &a.inputs.concepts), ("vocab", &tokenizer_path)];
    match (&a.examples, &a.inputs.corpus, &a.inputs.taxonomy) {
        (Some(e), None, None) => inputs.push(("examples", e)),
        (None, Some(c), Some(t)) => {
            inputs.push(("corpus", c));
            inputs.push(("taxonomy", t));
        }
        _ => return Err(Usage("pretrain needs --examples, or --corpus with --taxonomy".into()).into()),
    }
    let mut run = ctx.start("pretrain", train.seed, &inputs)?;

    let tokenizer = WordPiece::load(&tokenizer_path)?;
    let mut encoder = overlay(&base, &encoder_keys, "encoder")?;
    encoder.vocab_size = tokenizer.len();
    encoder.validate()?;
    let vocab = read_vocab(&a.inputs.concepts)?;
    let examples: Vec<PretrainExample> = match (&a.examples, &a.inputs.corpus, &a.inputs.taxonomy) {
        (Some(e), _, _) => read_jsonl(e)?,
        (_, Some(c), Some(t)) => {
            let (ex, report) = prepare_corpus(&read_corpus(c)?, &tokenizer, &read_taxonomy(t)?, &vocab, train.max_len)?;
            run.write_json("prepare_report.json", &report)?;
            ex
        }
        _ => unreachable!("checked above"),
    };
    log::info!("{} examples, {} concepts, {} steps", examples.len(), vocab.len(), train.max_steps);

    let outcome = run_pretrain::<f32>(&examples, &tokenizer, &vocab, &encoder, &train, &run.out, a.resume)?;
    for name in ["checkpoint", concept_core::pretrain::METRICS_FILE] {
        run.output(name);
    }
    let last = outcome.history.last();
    run.write_json(
        "summary.json",
        &Summary {
            examples: examples.len(),
            resumed_from: outcome.resumed_from,
            steps_run: outcome.history.len(),
            final_step: last.map(|m| m.step),
            final_mlm: last.map(|m| m.mlm),
            final_ecp: last.map(|m| m.ecp),
            final_total: last.map(|m| m.total),
        },
    )?;
    run.finish(&Resolved { preset: &preset, encoder: &encoder, train: &train })?;
    Ok(())
}
