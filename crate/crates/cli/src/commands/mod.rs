mod data;
mod evals;
mod train;

use std::path::{Path, PathBuf};

use anyhow::Result;
use concept_core::corpus::io::read_jsonl;
use concept_core::evals::data::Splits;
use concept_core::evals::{FineTuneConfig, Task};
use concept_core::model::checkpoint::{load_tokenizer, CheckpointConfig, CONFIG_FILE};
use concept_core::model::{load_model, ConceptModel};
use concept_core::pretrain::CHECKPOINT_DIR;
use concept_core::taxonomy::{Concept, ConceptVocab};
use concept_core::tokenizer::WordPiece;
use concept_core::Error;
use serde::de::DeserializeOwned;
use toml::Table;

use crate::cli::{Cli, Command, FineTune};
use crate::config::{overlay, read_table, take_string};
use crate::manifest::{digest_inputs, InputDigest, Run};
use crate::Usage;

/// Settings shared by every command.
pub struct Context {
    pub seed: Option<u64>,
    pub config_path: Option<PathBuf>,
    /// Settings from `--config` not yet consumed.
    pub config: Table,
    pub out: PathBuf,
}

impl Context {
    /// Validates and digests `inputs` (plus the config file) and creates
    /// the output directory.
    pub fn start(&self, command: &'static str, seed: u64, inputs: &[(&str, &Path)]) -> Result<Run> {
        let mut all: Vec<(&str, &Path)> = inputs.to_vec();
        if let Some(c) = &self.config_path {
            all.push(("config", c));
        }
        let digests: Vec<InputDigest> = digest_inputs(&all)?;
        Ok(Run::new(command, self.out.clone(), seed, digests)?)
    }

    /// Fails on settings no part of the command consumed.
    pub fn leftover(&self) -> Result<()> {
        match self.config.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown setting {k:?}")).into()),
            None => Ok(()),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let mut ctx = Context {
        seed: cli.global.seed,
        config: read_table(cli.global.config.as_deref())?,
        config_path: cli.global.config,
        out: cli.global.out.unwrap_or_else(|| Path::new("runs").join(name)),
    };
    match cli.command {
        Command::Synth => data::synth(&mut ctx),
        Command::BuildTaxonomy(a) => data::build_taxonomy(&mut ctx, a),
        Command::SelectConcepts(a) => data::select(&mut ctx, a),
        Command::PrepareCorpus(a) => data::prepare(&mut ctx, a),
        Command::BuildFigerFiner(a) => data::figer_finer(&mut ctx, a),
        Command::BuildCkt(a) => data::ckt(&mut ctx, a),
        Command::Pretrain(a) => train::pretrain(&mut ctx, a),
        Command::FinetuneTyping(a) => evals::typing(&mut ctx, a),
        Command::FinetuneRc(a) => evals::relation(&mut ctx, a),
        Command::KgcTc(a) => evals::triple_classification_cmd(&mut ctx, a),
        Command::KgcLp(a) => evals::link_prediction_cmd(&mut ctx, a),
        Command::Probe(a) => evals::probe(&mut ctx, a),
        Command::SimilarityReport(a) => evals::similarity(&mut ctx, a),
    }
}

/// Accepts a pre-training output directory or the checkpoint inside it.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.join(CONFIG_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub struct Loaded {
    pub model: ConceptModel<f32>,
    pub config: CheckpointConfig,
    pub tokenizer: WordPiece,
    pub vocab: ConceptVocab,
}

pub fn load_checkpoint(dir: &Path) -> Result<Loaded> {
    let (model, config) = load_model::<f32>(dir)?;
    let tokenizer = load_tokenizer(dir)?;
    let vocab = ConceptVocab::new(config.concepts.iter().map(|c| Concept::new(c, c)).collect())?;
    if vocab.ids() != config.concepts {
        return Err(Error::Checkpoint(format!("{}: concept ids are not in sorted order", dir.display())).into());
    }
    Ok(Loaded { model, config, tokenizer, vocab })
}

/// Task preset, then `--config`, then flags.
pub fn finetune_config(ctx: &mut Context, tune: &FineTune, default: Task) -> Result<(Task, FineTuneConfig)> {
    let named = match &tune.task {
        Some(t) => Some(t.clone()),
        None => take_string(&mut ctx.config, "task")?,
    };
    let task = match named {
        Some(t) => t.parse::<Task>().map_err(|e| Usage(e.to_string()))?,
        None => default,
    };
    let keys = std::mem::take(&mut ctx.config);
    let mut cfg = overlay(&task.preset(), &keys, "fine-tuning")?;
    if let Some(e) = tune.epochs {
        cfg.epochs = e;
    }
    if let Some(t) = tune.threshold {
        cfg.threshold = t;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok((task, cfg))
}

pub fn split_paths(dir: &Path, ext: &str) -> (PathBuf, Option<PathBuf>, Option<PathBuf>) {
    let optional = |name: &str| Some(dir.join(format!("{name}.{ext}"))).filter(|p| p.exists());
    (dir.join(format!("train.{ext}")), optional("dev"), optional("test"))
}

pub fn read_splits<T: DeserializeOwned>(dir: &Path) -> Result<Splits<T>> {
    let (train, dev, test) = split_paths(dir, "jsonl");
    let read = |p: Option<PathBuf>| -> Result<Vec<T>> { Ok(p.map(|p| read_jsonl(&p)).transpose()?.unwrap_or_default()) };
    Ok(Splits { train: read_jsonl(&train)?, dev: read(dev)?, test: read(test)? })
}

/// Inputs for a split directory: train plus whichever of dev and test exist.
pub fn split_inputs<'a>(paths: &'a (PathBuf, Option<PathBuf>, Option<PathBuf>)) -> Vec<(&'static str, &'a Path)> {
    let mut v: Vec<(&str, &Path)> = vec![("train", &paths.0)];
    if let Some(p) = &paths.1 {
        v.push(("dev", p));
    }
    if let Some(p) = &paths.2 {
        v.push(("test", p));
    }
    v
}
