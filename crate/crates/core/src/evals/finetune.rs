//! Shared fine-tuning machinery: hyperparameter presets, a pooled
//! classifier over encoder states and a deterministic training loop.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Encoder, EncoderCache, Linear, ParamMut, ParamRef, Params, INIT_STD};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrain::LossValue;
use crate::scalar::Scalar;
use crate::seed;
use crate::tokenizer::{Token, WordPiece, CLS, SEP};

use super::data::CharSpan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    OpenEntity,
    Figer,
    FigerFiner,
    Tacred,
    Fb15kTc,
    Fb15kLp,
    WikiCktTc,
    WikiCktLp,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::OpenEntity,
        Task::Figer,
        Task::FigerFiner,
        Task::Tacred,
        Task::Fb15kTc,
        Task::Fb15kLp,
        Task::WikiCktTc,
        Task::WikiCktLp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::OpenEntity => "open-entity",
            Task::Figer => "figer",
            Task::FigerFiner => "figer-finer",
            Task::Tacred => "tacred",
            Task::Fb15kTc => "fb15k-tc",
            Task::Fb15kLp => "fb15k-lp",
            Task::WikiCktTc => "wiki-ckt-tc",
            Task::WikiCktLp => "wiki-ckt-lp",
        }
    }

    /// Reference hyperparameters `(lr, batch, epochs, max_len)`.
    pub fn preset(self) -> FineTuneConfig {
        let (lr, batch_size, epochs, max_len) = match self {
            Task::OpenEntity => (1e-5, 16, 15, 256),
            Task::Figer => (2e-5, 2048, 5, 256),
            Task::FigerFiner => (2e-5, 2048, 30, 256),
            Task::Tacred => (2e-5, 32, 5, 256),
            Task::Fb15kTc => (2e-5, 128, 5, 512),
            Task::Fb15kLp => (2e-5, 128, 10, 512),
            Task::WikiCktTc => (2e-5, 128, 10, 512),
            Task::WikiCktLp => (2e-5, 128, 30, 512),
        };
        FineTuneConfig {
            lr,
            batch_size,
            epochs,
            max_len,
            ..FineTuneConfig::default()
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
            Error::arg(format!("unknown task {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Sigmoid decision threshold for multi-label and binary heads.
    pub threshold: f64,
    /// Corrupted triples generated per positive in triple classification.
    pub negative_rate: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            batch_size: 32,
            epochs: 5,
            max_len: 256,
            weight_decay: 1e-2,
            seed: 0,
            threshold: 0.5,
            negative_rate: 1,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_len < 4 {
            return bad(format!("max_len {} is too short", self.max_len));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold == 0.0 {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One encoder input and the positions whose final states are pooled
/// (concatenated in order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Input {
    pub tokens: Vec<u32>,
    pub picks: Vec<usize>,
}

impl Input {
    /// Pools the `[CLS]` state.
    pub fn cls(tokens: Vec<u32>) -> Self {
        Self { tokens, picks: vec![0] }
    }
}

/// Indices of the first and last tokens overlapping a character span.
pub fn covering_tokens(tokens: &[Token], span: CharSpan) -> Option<(usize, usize)> {
    let first = tokens.partition_point(|t| t.end <= span.start);
    let last = tokens.partition_point(|t| t.start < span.end);
    (span.start < span.end && first < last).then(|| (first, last - 1))
}

/// Wraps content in `[CLS] .. [SEP]`, cutting a window of at most
/// `max_len - 2` content tokens that keeps `keep` (inclusive content
/// indices). Returns the sequence and the offset added to content indices.
pub fn fit_window(content: &[u32], keep: (usize, usize), max_len: usize, id: &str) -> Result<(Vec<u32>, isize)> {
    let budget = max_len.saturating_sub(2);
    let need = keep.1 + 1 - keep.0;
    if need > budget {
        return Err(Error::data(id, format!("{need} marked tokens do not fit max_len {max_len}")));
    }
    let lo = if content.len() <= budget {
        0
    } else {
        let slack = budget - need;
        keep.0.saturating_sub(slack / 2).min(content.len() - budget)
    };
    let hi = (lo + budget).min(content.len());
    let mut out = Vec::with_capacity(hi - lo + 2);
    out.push(CLS);
    out.extend_from_slice(&content[lo..hi]);
    out.push(SEP);
    Ok((out, 1 - lo as isize))
}

/// `[CLS] a [SEP] b [SEP] ...` over pre-tokenized segments.
pub fn segments_input(segments: &[Vec<u32>], max_len: usize, id: &str) -> Result<Vec<u32>> {
    let len = 1 + segments.iter().map(|s| s.len() + 1).sum::<usize>();
    if len > max_len {
        return Err(Error::data(id, format!("input of {len} tokens exceeds max_len {max_len}")));
    }
    let mut out = Vec::with_capacity(len);
    out.push(CLS);
    for s in segments {
        out.extend_from_slice(s);
        out.push(SEP);
    }
    Ok(out)
}

pub fn encode_name(tokenizer: &WordPiece, name: &str, id: &str) -> Result<Vec<u32>> {
    let ids = tokenizer.encode_ids(name);
    if ids.is_empty() {
        return Err(Error::data(id, format!("name {name:?} has no tokens")));
    }
    Ok(ids)
}

/// Encoder plus a linear head over pooled final states.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T> {
    pub encoder: Encoder<T>,
    pub head: Linear<T>,
    pub picks: usize,
}

impl<T: Scalar> Params<T> for Classifier<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.encoder.collect(&crate::model::params::join(prefix, "encoder"), out);
        self.head.collect(&crate::model::params::join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.encoder.collect_mut(&crate::model::params::join(prefix, "encoder"), out);
        self.head.collect_mut(&crate::model::params::join(prefix, "head"), out);
    }
}

struct Pass<T> {
    caches: Vec<EncoderCache<T>>,
    lengths: Vec<usize>,
    pooled: Array2<T>,
}

impl<T: Scalar> Classifier<T> {
    /// Copies `encoder`; the head gets a fresh seeded initialization.
    pub fn new(encoder: &Encoder<T>, picks: usize, outputs: usize, seed: u64) -> Result<Self> {
        if picks == 0 || outputs == 0 {
            return Err(Error::arg("classifier needs at least one pooled position and output"));
        }
        let mut head = Linear::zeros(picks * encoder.hidden(), outputs);
        head.initialize(seed::derive(seed, "head", "", 0), INIT_STD);
        Ok(Self {
            encoder: encoder.clone(),
            head,
            picks,
        })
    }

    fn pool(&self, inputs: &[&Input], dropout: Option<(u64, u64)>) -> Result<Pass<T>> {
        let d = self.encoder.hidden();
        let mut pooled = Array2::zeros((inputs.len(), self.picks * d));
        let mut caches = Vec::with_capacity(inputs.len());
        let mut lengths = Vec::with_capacity(inputs.len());
        for (r, x) in inputs.iter().enumerate() {
            if x.picks.len() != self.picks {
                return Err(Error::Shape(format!("{} pooled positions, head expects {}", x.picks.len(), self.picks)));
            }
            let mut rng = dropout.map(|(sd, step)| seed::substream(sd, "ft-dropout", &step.to_string(), r as u64));
            let (h, c) = self.encoder.forward_row(&x.tokens, &vec![true; x.tokens.len()], rng.as_mut())?;
            for (k, &p) in x.picks.iter().enumerate() {
                if p >= h.nrows() {
                    return Err(Error::arg(format!("pooled position {p} past sequence end")));
                }
                pooled.slice_mut(s![r, k * d..(k + 1) * d]).assign(&h.row(p));
            }
            caches.push(c);
            lengths.push(h.nrows());
        }
        Ok(Pass { caches, lengths, pooled })
    }

    /// Eval-mode logits, one row per input.
    pub fn logits(&self, inputs: &[Input]) -> Result<Array2<T>> {
        let mut out = Array2::zeros((inputs.len(), self.head.outputs()));
        for (chunk, rows) in inputs.chunks(64).zip(out.axis_chunks_iter_mut(ndarray::Axis(0), 64)) {
            let refs: Vec<&Input> = chunk.iter().collect();
            let pass = self.pool(&refs, None)?;
            let mut rows = rows;
            rows.assign(&self.head.forward(pass.pooled.view()));
        }
        Ok(out)
    }

    /// Loss of one batch; gradients accumulate into `grads`.
    fn loss_and_grad(
        &self,
        inputs: &[&Input],
        dropout: Option<(u64, u64)>,
        loss: &dyn Fn(ArrayView2<'_, T>) -> Result<(LossValue<T>, Array2<T>)>,
        grads: &mut Classifier<T>,
    ) -> Result<LossValue<T>> {
        let pass = self.pool(inputs, dropout)?;
        let logits = self.head.forward(pass.pooled.view());
        let (value, dlogits) = loss(logits.view())?;
        let dpooled = self.head.backward(pass.pooled.view(), &dlogits, &mut grads.head);
        let d = self.encoder.hidden();
        for (r, x) in inputs.iter().enumerate() {
            let mut dh = Array2::zeros((pass.lengths[r], d));
            for (k, &p) in x.picks.iter().enumerate() {
                let mut row = dh.row_mut(p);
                row += &dpooled.slice(s![r, k * d..(k + 1) * d]);
            }
            self.encoder.backward_row(&pass.caches[r], &dh, &mut grads.encoder);
        }
        Ok(value)
    }
}

/// Sample order of one epoch.
pub fn epoch_order(n: usize, seed: u64, tag: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::substream(seed, "ft-order", tag, epoch as u64));
    order
}

/// Minibatch AdamW over shuffled epochs. `loss(indices, logits)` returns the
/// batch loss and its gradient with respect to the logits. Returns the mean
/// loss of each epoch.
pub fn fit<T: Scalar>(
    model: &mut Classifier<T>,
    inputs: &[Input],
    config: &FineTuneConfig,
    tag: &str,
    loss: impl Fn(&[usize], ArrayView2<'_, T>) -> Result<(LossValue<T>, Array2<T>)>,
) -> Result<Vec<f64>> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::arg(format!("{tag}: no training samples")));
    }
    let mut optimizer = AdamW::new(model, config.optimizer());
    let dropout_seed = seed::derive(config.seed, "ft-dropout", tag, 0);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(inputs.len(), config.seed, tag, epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let step = optimizer.step + 1;
            let refs: Vec<&Input> = idx.iter().map(|&i| &inputs[i]).collect();
            let mut grads = model.zeroed();
            let batch_loss = |logits: ArrayView2<'_, T>| loss(idx, logits);
            let value = model.loss_and_grad(&refs, Some((dropout_seed, step)), &batch_loss, &mut grads)?;
            let v = value.value.to_f64().unwrap_or(f64::NAN);
            if !v.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite {
                    step,
                    batch: format!("{tag} epoch {epoch} batch {b}"),
                });
            }
            optimizer.update(model, &grads, |_| false);
            total += v;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("{tag} epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok(history)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Labels whose probability exceeds `threshold`; the argmax when none does.
pub fn multilabel_decision(logits: &[f64], threshold: f64) -> Vec<usize> {
    let chosen: Vec<usize> = (0..logits.len()).filter(|&i| sigmoid(logits[i]) > threshold).collect();
    if chosen.is_empty() && !logits.is_empty() {
        vec![super::probe::argmax(logits.iter().copied())]
    } else {
        chosen
    }
}

pub(crate) fn rows_f64<T: Scalar>(logits: &Array2<T>) -> Vec<Vec<f64>> {
    logits
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}
