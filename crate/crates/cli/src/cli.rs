use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "concept", version, about = "Concept-enhanced encoder pre-training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML file of settings; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: `runs/<command>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
}

impl Global {
    pub fn log_level(&self) -> log::LevelFilter {
        match (self.quiet, self.verbose) {
            (true, _) => log::LevelFilter::Error,
            (_, 0) => log::LevelFilter::Warn,
            (_, 1) => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract isA triples from a `subject<TAB>property<TAB>object` dump.
    BuildTaxonomy(BuildTaxonomy),
    /// Select popular single-word concepts into a concept vocabulary.
    SelectConcepts(SelectConcepts),
    /// Tokenize and align an annotated corpus into pre-training examples.
    PrepareCorpus(PrepareCorpus),
    /// Pre-train an encoder with masked language modeling and concept prediction.
    Pretrain(Pretrain),
    /// Fine-tune and score multi-label entity typing.
    FinetuneTyping(FinetuneTyping),
    /// Remove frequent training labels from an entity typing dataset.
    BuildFigerFiner(BuildFigerFiner),
    /// Fine-tune and score relation classification.
    FinetuneRc(FinetuneRc),
    /// Fine-tune and score triple classification.
    KgcTc(Kgc),
    /// Fine-tune and score link prediction.
    KgcLp(Kgc),
    /// Mine support/query transfer groups from a knowledge graph.
    BuildCkt(BuildCkt),
    /// Zero-shot concept prediction for annotated mentions.
    Probe(Probe),
    /// Within- versus across-concept similarity of mention representations.
    SimilarityReport(Similarity),
    /// Generate a synthetic world: taxonomy, corpus, knowledge graph and task data.
    Synth,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildTaxonomy(_) => "build-taxonomy",
            Command::SelectConcepts(_) => "select-concepts",
            Command::PrepareCorpus(_) => "prepare-corpus",
            Command::Pretrain(_) => "pretrain",
            Command::FinetuneTyping(_) => "finetune-typing",
            Command::BuildFigerFiner(_) => "build-figer-finer",
            Command::FinetuneRc(_) => "finetune-rc",
            Command::KgcTc(_) => "kgc-tc",
            Command::KgcLp(_) => "kgc-lp",
            Command::BuildCkt(_) => "build-ckt",
            Command::Probe(_) => "probe",
            Command::SimilarityReport(_) => "similarity-report",
            Command::Synth => "synth",
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildTaxonomy {
    #[arg(long)]
    pub dump: PathBuf,
    /// Entity ids to keep, one per line.
    #[arg(long)]
    pub entities: PathBuf,
    /// Class whose instances count as humans.
    #[arg(long, default_value = concept_core::taxonomy::HUMAN_SENTINEL)]
    pub sentinel: String,
}

#[derive(Debug, Args)]
pub struct SelectConcepts {
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// `entity<TAB>count` mention counts.
    #[arg(long)]
    pub mention_counts: PathBuf,
    /// `concept<TAB>count` search frequencies.
    #[arg(long)]
    pub sfc: PathBuf,
    /// `concept<TAB>label` rows; ids stand in for missing labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub allow: Option<PathBuf>,
    #[arg(long)]
    pub deny: Option<PathBuf>,
    /// `source<TAB>target` concept merges.
    #[arg(long)]
    pub merge: Option<PathBuf>,
    /// `word` or `token`.
    #[arg(long)]
    pub word_filter: Option<String>,
    /// Tokenizer vocabulary for the `token` word filter.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusInputs {
    /// Annotated documents, one JSON object per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Concept vocabulary JSON.
    #[arg(long)]
    pub concepts: PathBuf,
    /// Tokenizer vocabulary, one token per line.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareCorpus {
    #[command(flatten)]
    pub inputs: CorpusInputs,
}

#[derive(Debug, Args)]
pub struct Pretrain {
    #[command(flatten)]
    pub inputs: CorpusInputs,
    /// Prepared examples instead of `--corpus` and `--taxonomy`.
    #[arg(long, conflicts_with_all = ["corpus", "taxonomy"])]
    pub examples: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Weight of the concept loss; 0 trains masked language modeling only.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct FineTune {
    /// Pre-trained checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Hyperparameter preset, e.g. `open-entity`, `tacred`, `fb15k-tc`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Decision threshold on sigmoid outputs.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FinetuneTyping {
    #[command(flatten)]
    pub tune: FineTune,
    /// Directory with `train.jsonl` and optional `dev.jsonl`, `test.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// Label vocabulary, one per line (default: `<data>/labels.txt`, else the training labels).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildFigerFiner {
    /// Directory with `train.jsonl` and optional `dev.jsonl`, `test.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// Labels seen in more training samples than this are removed.
    #[arg(long, default_value_t = concept_core::evals::builders::FIGER_FINER_THRESHOLD)]
    pub threshold: usize,
}

#[derive(Debug, Args)]
pub struct FinetuneRc {
    #[command(flatten)]
    pub tune: FineTune,
    /// Directory with `train.jsonl` and optional `dev.jsonl`, `test.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// `full` or `only-mention`.
    #[arg(long, default_value = "full")]
    pub mode: String,
    #[arg(long, default_value = "no_relation")]
    pub no_relation: String,
}

#[derive(Debug, Args)]
pub struct Kgc {
    #[command(flatten)]
    pub tune: FineTune,
    /// Directory with `train.tsv`, `dev.tsv`, `test.tsv` and `names.tsv`.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildCkt {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Entity and relation names, copied next to the splits.
    #[arg(long)]
    pub names: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub groups: usize,
}

#[derive(Debug, Args)]
pub struct Probe {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Annotated documents to probe.
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Leave mention tokens visible.
    #[arg(long)]
    pub unmasked: bool,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Similarity {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Replace mention tokens by `[MASK]`.
    #[arg(long)]
    pub masked: bool,
    #[arg(long)]
    pub max_len: Option<usize>,
}
