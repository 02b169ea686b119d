//! Knowledge graph completion from entity and relation names: triple
//! classification with a cross-encoder and link prediction with a
//! bi-encoder trained on in-batch negatives.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::data::{name_of, KGTriple, NameTable, Splits};
use super::finetune::{encode_name, epoch_order, fit, rows_f64, segments_input, sigmoid, Classifier, FineTuneConfig, Input};
use super::metrics::{filtered_rank, random_hits_at_10, ranking_metrics, remaining_candidates, RankingMetrics};
use crate::error::{Error, Result};
use crate::model::{Encoder, Params};
use crate::optim::AdamW;
use crate::pretrain::ecp_loss_with_logits;
use crate::scalar::Scalar;
use crate::seed::{self, Rng};
use crate::tokenizer::{WordPiece, MASK};

/// Sorted distinct heads and tails.
pub fn kg_entities<'a>(triples: impl IntoIterator<Item = &'a KGTriple>) -> Vec<String> {
    let set: BTreeSet<&str> = triples
        .into_iter()
        .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
        .collect();
    set.into_iter().map(String::from).collect()
}

fn name_ids(names: &NameTable, tokenizer: &WordPiece, id: &str) -> Result<Vec<u32>> {
    encode_name(tokenizer, name_of(names, id)?, id)
}

/// `[CLS] head [SEP] relation [SEP] tail [SEP]`.
pub fn tc_input(triple: &KGTriple, names: &NameTable, tokenizer: &WordPiece, max_len: usize) -> Result<Input> {
    let segs = [
        name_ids(names, tokenizer, &triple.head)?,
        name_ids(names, tokenizer, &triple.relation)?,
        name_ids(names, tokenizer, &triple.tail)?,
    ];
    Ok(Input::cls(segments_input(&segs, max_len, &triple.head)?))
}

const MAX_ATTEMPTS: usize = 1000;

/// Replaces the head or the tail (fair coin) with a different entity drawn
/// uniformly, redrawing while the result is a known triple. `None` when no
/// unknown corruption turns up.
pub fn corrupt(triple: &KGTriple, entities: &[String], known: &HashSet<KGTriple>, rng: &mut Rng) -> Option<KGTriple> {
    if entities.len() < 2 {
        return None;
    }
    for _ in 0..MAX_ATTEMPTS {
        let replace_head = rng.random::<bool>();
        let e = &entities[rng.random_range(0..entities.len())];
        let mut c = triple.clone();
        let slot = if replace_head { &mut c.head } else { &mut c.tail };
        if slot == e {
            continue;
        }
        *slot = e.clone();
        if !known.contains(&c) {
            return Some(c);
        }
    }
    None
}

pub fn generate_negatives(
    positives: &[KGTriple],
    entities: &[String],
    known: &HashSet<KGTriple>,
    rate: usize,
    rng: &mut Rng,
) -> Vec<KGTriple> {
    let mut out = Vec::with_capacity(positives.len() * rate);
    for p in positives {
        for _ in 0..rate {
            match corrupt(p, entities, known, rng) {
                Some(c) => out.push(c),
                None => log::warn!("no negative found for {} {} {}", p.head, p.relation, p.tail),
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TcMetrics {
    pub accuracy: f64,
    /// Mean of the accuracies on positives and on negatives.
    pub balanced_accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn tc_metrics(predictions: &[bool], golds: &[bool]) -> Result<TcMetrics> {
    if predictions.len() != golds.len() || golds.is_empty() {
        return Err(Error::arg("prediction and gold lists must be equal and non-empty"));
    }
    let (mut tp, mut tn, mut pos, mut neg) = (0, 0, 0, 0);
    for (&p, &g) in predictions.iter().zip(golds) {
        if g {
            pos += 1;
            tp += usize::from(p);
        } else {
            neg += 1;
            tn += usize::from(!p);
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let balanced = match (pos, neg) {
        (0, _) => rate(tn, neg),
        (_, 0) => rate(tp, pos),
        _ => 0.5 * (rate(tp, pos) + rate(tn, neg)),
    };
    Ok(TcMetrics {
        accuracy: rate(tp + tn, golds.len()),
        balanced_accuracy: balanced,
        positives: pos,
        negatives: neg,
    })
}

pub struct TcOutcome<T> {
    pub model: Classifier<T>,
    pub epoch_losses: Vec<f64>,
    pub dev: Option<TcMetrics>,
    pub test: Option<TcMetrics>,
}

/// Positives followed by their corruptions, with labels.
pub fn labelled_triples(
    positives: &[KGTriple],
    entities: &[String],
    known: &HashSet<KGTriple>,
    rate: usize,
    rng: &mut Rng,
) -> (Vec<KGTriple>, Vec<bool>) {
    let negatives = generate_negatives(positives, entities, known, rate, rng);
    let labels = std::iter::repeat_n(true, positives.len())
        .chain(std::iter::repeat_n(false, negatives.len()))
        .collect();
    (positives.iter().cloned().chain(negatives).collect(), labels)
}

pub fn triple_classification<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    kg: &Splits<KGTriple>,
    names: &NameTable,
    config: &FineTuneConfig,
) -> Result<TcOutcome<T>> {
    config.validate()?;
    let entities = kg_entities(kg.iter_all());
    let known: HashSet<KGTriple> = kg.iter_all().cloned().collect();
    let split = |triples: &[KGTriple], tag: &str| -> Result<(Vec<Input>, Vec<bool>)> {
        let mut rng = seed::substream(config.seed, "tc-negatives", tag, 0);
        let (all, labels) = labelled_triples(triples, &entities, &known, config.negative_rate, &mut rng);
        let inputs = all
            .iter()
            .map(|t| tc_input(t, names, tokenizer, config.max_len))
            .collect::<Result<Vec<_>>>()?;
        Ok((inputs, labels))
    };
    let (train, train_labels) = split(&kg.train, "train")?;
    let targets: Array2<T> = Array2::from_shape_fn((train_labels.len(), 1), |(i, _)| {
        if train_labels[i] {
            T::one()
        } else {
            T::zero()
        }
    });
    let mut model = Classifier::new(encoder, 1, 1, config.seed)?;
    let epoch_losses = fit(&mut model, &train, config, "triple", |idx, logits| {
        let t = targets.select(ndarray::Axis(0), idx);
        Ok(ecp_loss_with_logits(logits, t.view(), &vec![true; idx.len()]))
    })?;
    let score = |triples: &[KGTriple], tag: &str| -> Result<Option<TcMetrics>> {
        if triples.is_empty() {
            return Ok(None);
        }
        let (inputs, golds) = split(triples, tag)?;
        let preds: Vec<bool> = rows_f64(&model.logits(&inputs)?)
            .iter()
            .map(|r| sigmoid(r[0]) > config.threshold)
            .collect();
        tc_metrics(&preds, &golds).map(Some)
    };
    let dev = score(&kg.dev, "dev")?;
    let test = score(&kg.test, "test")?;
    Ok(TcOutcome {
        model,
        epoch_losses,
        dev,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(h, r, ?)`.
    Tail,
    /// `(?, r, t)`.
    Head,
}

impl Direction {
    pub fn gold(self, t: &KGTriple) -> &str {
        match self {
            Direction::Tail => &t.tail,
            Direction::Head => &t.head,
        }
    }

    fn anchor(self, t: &KGTriple) -> &str {
        match self {
            Direction::Tail => &t.head,
            Direction::Head => &t.tail,
        }
    }
}

/// `[CLS] h [SEP] r [SEP] [MASK] [SEP]` for tail queries, mirrored for head
/// queries.
pub fn lp_query(
    triple: &KGTriple,
    direction: Direction,
    names: &NameTable,
    tokenizer: &WordPiece,
    max_len: usize,
) -> Result<Input> {
    let anchor = name_ids(names, tokenizer, direction.anchor(triple))?;
    let rel = name_ids(names, tokenizer, &triple.relation)?;
    let segs = match direction {
        Direction::Tail => [anchor, rel, vec![MASK]],
        Direction::Head => [vec![MASK], rel, anchor],
    };
    Ok(Input::cls(segments_input(&segs, max_len, direction.anchor(triple))?))
}

/// `[CLS] e [SEP]`.
pub fn lp_candidate(entity: &str, names: &NameTable, tokenizer: &WordPiece, max_len: usize) -> Result<Input> {
    Ok(Input::cls(segments_input(&[name_ids(names, tokenizer, entity)?], max_len, entity)?))
}

/// Known answers per `(direction, anchor, relation)`.
#[derive(Clone, Debug, Default)]
pub struct AnswerIndex {
    answers: BTreeMap<(Direction, String, String), BTreeSet<String>>,
}

impl AnswerIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a KGTriple>) -> Self {
        let mut answers: BTreeMap<_, BTreeSet<String>> = BTreeMap::new();
        for t in triples {
            for d in [Direction::Tail, Direction::Head] {
                answers
                    .entry((d, d.anchor(t).to_string(), t.relation.clone()))
                    .or_default()
                    .insert(d.gold(t).to_string());
            }
        }
        Self { answers }
    }

    pub fn answers(&self, triple: &KGTriple, direction: Direction) -> Option<&BTreeSet<String>> {
        self.answers
            .get(&(direction, direction.anchor(triple).to_string(), triple.relation.clone()))
    }
}

/// Final `[CLS]` states, eval mode, one row per input.
pub fn cls_vectors<T: Scalar>(encoder: &Encoder<T>, inputs: &[Input]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((inputs.len(), encoder.hidden()));
    for (mut row, x) in out.rows_mut().into_iter().zip(inputs) {
        let (h, _) = encoder.forward_row(&x.tokens, &vec![true; x.tokens.len()], None)?;
        row.assign(&h.row(0).mapv(|v| v.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(out)
}

pub type Query = (KGTriple, Direction);

/// Every query against every candidate entity.
pub fn lp_scores<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    names: &NameTable,
    queries: &[Query],
    entities: &[String],
    max_len: usize,
) -> Result<Array2<f64>> {
    let q: Vec<Input> = queries
        .iter()
        .map(|(t, d)| lp_query(t, *d, names, tokenizer, max_len))
        .collect::<Result<_>>()?;
    let c: Vec<Input> = entities
        .iter()
        .map(|e| lp_candidate(e, names, tokenizer, max_len))
        .collect::<Result<_>>()?;
    Ok(cls_vectors(encoder, &q)?.dot(&cls_vectors(encoder, &c)?.t()))
}

/// Filtered fractional ranks and the number of candidates left per query.
pub fn filtered_ranks(
    scores: &Array2<f64>,
    queries: &[Query],
    entities: &[String],
    known: &AnswerIndex,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let position: BTreeMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let mut ranks = Vec::with_capacity(queries.len());
    let mut sizes = Vec::with_capacity(queries.len());
    for (row, (t, d)) in scores.rows().into_iter().zip(queries) {
        let gold = *position
            .get(d.gold(t))
            .ok_or_else(|| Error::data(d.gold(t), "gold entity missing from the candidate set"))?;
        let filtered: BTreeSet<usize> = known
            .answers(t, *d)
            .into_iter()
            .flatten()
            .filter_map(|e| position.get(e.as_str()).copied())
            .filter(|&i| i != gold)
            .collect();
        let scores: Vec<f64> = row.to_vec();
        ranks.push(filtered_rank::<f64, _>(&scores, gold, &filtered)?);
        sizes.push(remaining_candidates(scores.len(), gold, &filtered));
    }
    Ok((ranks, sizes))
}

pub fn both_directions(triples: &[KGTriple]) -> Vec<Query> {
    triples
        .iter()
        .flat_map(|t| [(t.clone(), Direction::Tail), (t.clone(), Direction::Head)])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpReport {
    pub metrics: RankingMetrics<f64>,
    /// Expected Hits@10 of a uniformly random ranking of the same candidates.
    pub random_hits_at_10: f64,
}

pub struct LpOutcome<T> {
    pub encoder: Encoder<T>,
    pub entities: Vec<String>,
    pub epoch_losses: Vec<f64>,
    pub dev: Option<LpReport>,
    pub test: Option<LpReport>,
}

/// Ranks queries against all entities, filtering every known completion.
pub fn evaluate_link_prediction<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    names: &NameTable,
    queries: &[Query],
    entities: &[String],
    known: &AnswerIndex,
    max_len: usize,
) -> Result<Option<LpReport>> {
    if queries.is_empty() {
        return Ok(None);
    }
    let scores = lp_scores(encoder, tokenizer, names, queries, entities, max_len)?;
    let (ranks, sizes) = filtered_ranks(&scores, queries, entities, known)?;
    Ok(Some(LpReport {
        metrics: ranking_metrics(&ranks)?,
        random_hits_at_10: random_hits_at_10(&sizes),
    }))
}

/// Softmax cross-entropy of each query against the distinct gold entities
/// of its batch; other known answers of the query are left out of its
/// softmax. Returns the mean loss and gradients for queries and candidates.
fn in_batch_loss(scores: &Array2<f64>, gold: &[usize], excluded: &[Vec<bool>]) -> (f64, Array2<f64>) {
    let b = scores.nrows();
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for i in 0..b {
        let row = scores.row(i);
        let live: Vec<usize> = (0..row.len()).filter(|&u| u == gold[i] || !excluded[i][u]).collect();
        let m = live.iter().map(|&u| row[u]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = live.iter().map(|&u| (row[u] - m).exp()).sum();
        total += m + z.ln() - row[gold[i]];
        for &u in &live {
            grad[[i, u]] = (row[u] - m).exp() / z / b as f64;
        }
        grad[[i, gold[i]]] -= 1.0 / b as f64;
    }
    (total / b as f64, grad)
}

pub fn link_prediction<T: Scalar>(
    encoder: &Encoder<T>,
    tokenizer: &WordPiece,
    kg: &Splits<KGTriple>,
    names: &NameTable,
    config: &FineTuneConfig,
) -> Result<LpOutcome<T>> {
    config.validate()?;
    let entities = kg_entities(kg.iter_all());
    let position: BTreeMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let train_known = AnswerIndex::new(&kg.train);
    let queries = both_directions(&kg.train);
    if queries.is_empty() {
        return Err(Error::arg("link prediction: no training triples"));
    }
    let q_inputs: Vec<Input> = queries
        .iter()
        .map(|(t, d)| lp_query(t, *d, names, tokenizer, config.max_len))
        .collect::<Result<_>>()?;
    let c_inputs: Vec<Input> = entities
        .iter()
        .map(|e| lp_candidate(e, names, tokenizer, config.max_len))
        .collect::<Result<_>>()?;

    let mut model = encoder.clone();
    let mut optimizer = AdamW::new(&model, config.optimizer());
    let dropout_seed = seed::derive(config.seed, "ft-dropout", "link", 0);
    let d = model.hidden();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(queries.len(), config.seed, "link", epoch);
        let (mut sum, mut batches) = (0.0, 0);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let step = optimizer.step + 1;
            let mut cands: Vec<usize> = Vec::new();
            let mut gold = Vec::with_capacity(idx.len());
            for &i in idx {
                let (t, dir) = &queries[i];
                let e = position[dir.gold(t)];
                let u = cands.iter().position(|&c| c == e).unwrap_or_else(|| {
                    cands.push(e);
                    cands.len() - 1
                });
                gold.push(u);
            }
            let excluded: Vec<Vec<bool>> = idx
                .iter()
                .map(|&i| {
                    let (t, dir) = &queries[i];
                    let ans = train_known.answers(t, *dir);
                    cands
                        .iter()
                        .map(|&c| ans.is_some_and(|a| a.contains(&entities[c])))
                        .collect()
                })
                .collect();
            let forward = |input: &Input, row: usize| {
                let mut rng = seed::substream(dropout_seed, "ft-dropout", &step.to_string(), row as u64);
                model.forward_row(&input.tokens, &vec![true; input.tokens.len()], Some(&mut rng))
            };
            let mut q_pass = Vec::with_capacity(idx.len());
            for (r, &i) in idx.iter().enumerate() {
                q_pass.push(forward(&q_inputs[i], r)?);
            }
            let mut c_pass = Vec::with_capacity(cands.len());
            for (r, &c) in cands.iter().enumerate() {
                c_pass.push(forward(&c_inputs[c], idx.len() + r)?);
            }
            let cls = |pass: &[(Array2<T>, _)]| {
                Array2::from_shape_fn((pass.len(), d), |(r, k)| pass[r].0[[0, k]].to_f64().unwrap_or(f64::NAN))
            };
            let q = cls(&q_pass);
            let c = cls(&c_pass);
            let (loss, ds) = in_batch_loss(&q.dot(&c.t()), &gold, &excluded);
            let dq = ds.dot(&c);
            let dc = ds.t().dot(&q);
            let mut grads = model.zeroed();
            for (pass, dv) in q_pass.iter().zip(dq.rows()).chain(c_pass.iter().zip(dc.rows())) {
                let mut dh = Array2::zeros(pass.0.raw_dim());
                dh.row_mut(0).assign(&dv.mapv(T::lit));
                model.backward_row(&pass.1, &dh, &mut grads);
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite {
                    step,
                    batch: format!("link epoch {epoch} batch {b}"),
                });
            }
            optimizer.update(&mut model, &grads, |_| false);
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("link epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    let known = AnswerIndex::new(kg.iter_all());
    let eval = |triples: &[KGTriple]| {
        evaluate_link_prediction(&model, tokenizer, names, &both_directions(triples), &entities, &known, config.max_len)
    };
    let dev = eval(&kg.dev)?;
    let test = eval(&kg.test)?;
    Ok(LpOutcome {
        encoder: model,
        entities,
        epoch_losses,
        dev,
        test,
    })
}
