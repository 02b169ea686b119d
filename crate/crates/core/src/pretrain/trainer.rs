use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::step::{train_step, StepMetrics};
use crate::corpus::{build_batch, mask_example, MaskingConfig, PretrainBatch, PretrainExample};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, write_dir_atomic, write_file, write_model_files};
use crate::model::{ConceptModel, EncoderConfig};
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::seed;
use crate::taxonomy::ConceptVocab;
use crate::tokenizer::WordPiece;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const STATE_FILE: &str = "trainer_state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Weight of the concept loss.
    pub lambda: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub max_len: usize,
    pub entity_mask_rate: f64,
    pub mlm_mask_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            weight_decay: 1e-2,
            batch_size: 32,
            max_steps: 1000,
            lambda: 1.0,
            seed: 0,
            checkpoint_interval: 500,
            log_interval: 10,
            max_len: 128,
            entity_mask_rate: 0.15,
            mlm_mask_rate: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 || self.log_interval == 0 || self.max_len < 3 {
            return bad("batch_size, checkpoint_interval and log_interval must be positive and max_len at least 3".into());
        }
        for (name, r) in [("entity_mask_rate", self.entity_mask_rate), ("mlm_mask_rate", self.mlm_mask_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("beta1, beta2 must lie in [0, 1) and adam_eps must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn masking(&self) -> MaskingConfig {
        MaskingConfig {
            entity_rate: self.entity_mask_rate,
            mlm_rate: self.mlm_mask_rate,
        }
    }

    /// Settings that change the trajectory and so must match on resume.
    fn trajectory_key(&self) -> TrainConfig {
        TrainConfig {
            max_steps: 0,
            checkpoint_interval: 0,
            log_interval: 0,
            ..self.clone()
        }
    }
}

/// Epoch-wise shuffled batch order, a pure function of the seed.
#[derive(Clone, Debug)]
pub struct Schedule {
    examples: usize,
    batch_size: usize,
    seed: u64,
}

impl Schedule {
    pub fn new(examples: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            examples,
            batch_size,
            seed,
        }
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.examples.div_ceil(self.batch_size) as u64
    }

    /// `(epoch, batch in epoch, example indices)` for zero-based step `s`.
    pub fn batch(&self, s: u64) -> (u64, u64, Vec<usize>) {
        let per = self.batches_per_epoch().max(1);
        let (epoch, k) = (s / per, s % per);
        let mut order: Vec<usize> = (0..self.examples).collect();
        order.shuffle(&mut seed::substream(self.seed, "order", "", epoch));
        let start = k as usize * self.batch_size;
        let end = (start + self.batch_size).min(self.examples);
        (epoch, k, order[start..end].to_vec())
    }
}

/// In-memory training state: model, optimizer and data schedule.
pub struct Trainer<'a, T> {
    pub model: ConceptModel<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    examples: &'a [PretrainExample],
    tokenizer: &'a WordPiece,
    schedule: Schedule,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        model: ConceptModel<T>,
        examples: &'a [PretrainExample],
        tokenizer: &'a WordPiece,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::arg("no pre-training examples"));
        }
        if tokenizer.len() != model.config().vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} tokens but the encoder expects {}",
                tokenizer.len(),
                model.config().vocab_size
            )));
        }
        let concepts = model.ecp.concepts();
        if let Some(ex) = examples
            .iter()
            .find(|e| e.mentions.iter().any(|m| m.target.hot.len() != concepts))
        {
            return Err(Error::data(
                ex.key.clone(),
                format!("concept target length differs from the {concepts}-concept head"),
            ));
        }
        let optimizer = AdamW::new(&model, config.optimizer());
        let schedule = Schedule::new(examples.len(), config.batch_size, config.seed);
        Ok(Self {
            model,
            optimizer,
            config,
            examples,
            tokenizer,
            schedule,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.optimizer.step
    }

    /// The masked batch consumed by zero-based step `s`.
    pub fn batch(&self, s: u64) -> Result<(String, PretrainBatch)> {
        let (epoch, k, idx) = self.schedule.batch(s);
        let masking = self.config.masking();
        let masked = idx
            .iter()
            .map(|&i| mask_example(&self.examples[i], &masking, self.config.seed, epoch, self.tokenizer))
            .collect::<Result<Vec<_>>>()?;
        Ok((format!("epoch {epoch} batch {k}"), build_batch(&masked, self.config.max_len)?))
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let (id, batch) = self.batch(self.optimizer.step)?;
        train_step(
            &mut self.model,
            &mut self.optimizer,
            &batch,
            self.config.lambda,
            self.config.seed,
            &id,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    step: u64,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct MetricsLine {
    step: u64,
    mlm: f64,
    ecp: f64,
    total: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    /// Metrics of every step run by this call.
    pub history: Vec<StepMetrics>,
    pub resumed_from: Option<u64>,
}

fn save_state<T: Scalar>(dir: &Path, trainer: &Trainer<'_, T>, vocab: &ConceptVocab) -> Result<()> {
    write_dir_atomic(dir, |tmp| {
        write_model_files(tmp, &trainer.model, &vocab.ids(), Some(trainer.tokenizer))?;
        write_file(&tmp.join(OPTIMIZER_FILE), &trainer.optimizer.to_bytes())?;
        let state = TrainerState {
            step: trainer.optimizer.step,
            config: trainer.config.clone(),
        };
        let json = serde_json::to_vec_pretty(&state).map_err(|e| Error::json(STATE_FILE, e))?;
        write_file(&tmp.join(STATE_FILE), &json)
    })
}

fn restore_state<T: Scalar>(dir: &Path, trainer: &mut Trainer<'_, T>, vocab: &ConceptVocab) -> Result<u64> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let state: TrainerState = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if state.config.trajectory_key() != trainer.config.trajectory_key() {
        return Err(Error::Config(format!(
            "{}: training settings differ from the checkpointed run",
            path.display()
        )));
    }
    let (model, cfg) = checkpoint::load_model::<T>(dir)?;
    if cfg.concepts != vocab.ids() || &cfg.encoder != trainer.model.config() {
        return Err(Error::Checkpoint(format!(
            "{}: model configuration or concept vocabulary differs",
            dir.display()
        )));
    }
    trainer.model = model;
    let opt_path = dir.join(OPTIMIZER_FILE);
    let bytes = fs::read(&opt_path).map_err(|e| Error::io(&opt_path, e))?;
    trainer.optimizer.load_moments(&bytes, &opt_path, state.step)?;
    Ok(state.step)
}

/// Keeps only log lines for steps up to `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let m: MetricsLine =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        if m.step <= step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_file(path, kept.as_bytes())
}

/// Joint pre-training with periodic atomic checkpoints in
/// `out_dir/checkpoint` and a JSON Lines log in `out_dir/metrics.jsonl`.
/// An initial checkpoint is written before the first step, so an
/// unwritable output directory fails early. With `resume`, training
/// continues from an existing checkpoint in `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain<T: Scalar>(
    examples: &[PretrainExample],
    tokenizer: &WordPiece,
    vocab: &ConceptVocab,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<PretrainOutcome> {
    if vocab.is_empty() {
        return Err(Error::Config("concept vocabulary is empty".into()));
    }
    let model = ConceptModel::<T>::new(encoder, vocab.len(), config.seed)?;
    let mut trainer = Trainer::new(model, examples, tokenizer, config.clone())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    let log_path = out_dir.join(METRICS_FILE);

    let resumed_from = if resume && ckpt.join(STATE_FILE).exists() {
        let step = restore_state(&ckpt, &mut trainer, vocab)?;
        truncate_log(&log_path, step)?;
        log::info!("resumed from step {step}");
        Some(step)
    } else {
        save_state(&ckpt, &trainer, vocab)?;
        write_file(&log_path, b"")?;
        None
    };

    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let start = Instant::now();
    let mut history = Vec::new();
    while trainer.steps_done() < config.max_steps {
        let m = trainer.step()?;
        let s = m.step;
        if s % config.log_interval == 0 || s == config.max_steps {
            let line = MetricsLine {
                step: s,
                mlm: m.mlm,
                ecp: m.ecp,
                total: m.total,
            };
            let mut text = serde_json::to_string(&line).map_err(|e| Error::json(METRICS_FILE, e))?;
            text.push('\n');
            log.write_all(text.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
            log::info!(
                "step {s} mlm {:.4} ecp {:.4} total {:.4} ({:.1}s)",
                m.mlm,
                m.ecp,
                m.total,
                start.elapsed().as_secs_f64()
            );
        }
        if s % config.checkpoint_interval == 0 || s == config.max_steps {
            save_state(&ckpt, &trainer, vocab)?;
        }
        history.push(m);
    }
    Ok(PretrainOutcome {
        checkpoint: ckpt,
        metrics_log: log_path,
        history,
        resumed_from,
    })
}

/// Parses a metrics log back into `(step, mlm, ecp, total)` rows.
pub fn read_metrics_log(path: &Path) -> Result<Vec<StepMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let m: MetricsLine =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(StepMetrics {
            step: m.step,
            mlm: m.mlm,
            ecp: m.ecp,
            total: m.total,
        });
    }
    Ok(out)
}
