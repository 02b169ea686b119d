use ndarray::{s, Array2};
use serde::Serialize;

use super::losses::{ecp_loss_with_logits, mlm_loss_with_grad, LossValue};
use crate::corpus::PretrainBatch;
use crate::error::{Error, Result};
use crate::model::{ConceptModel, Params};
use crate::optim::AdamW;
use crate::scalar::Scalar;
use crate::seed;

/// Dropout stream selector: rows of one step draw from
/// `(seed, step, row)` substreams.
#[derive(Clone, Copy, Debug)]
pub struct DropoutSeed {
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss<T> {
    pub mlm: LossValue<T>,
    pub ecp: LossValue<T>,
    pub total: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mlm: f64,
    pub ecp: f64,
    pub total: f64,
}

/// Joint loss `mlm + lambda * ecp` over a batch. With `grads`, gradients of
/// that loss are accumulated into it; the concept head is not backpropagated
/// when `lambda` is zero.
pub fn batch_loss<T: Scalar>(
    model: &ConceptModel<T>,
    batch: &PretrainBatch,
    lambda: f64,
    dropout: Option<DropoutSeed>,
    grads: Option<&mut ConceptModel<T>>,
) -> Result<BatchLoss<T>> {
    let d = model.encoder.hidden();
    let vocab = model.encoder.config.vocab_size;
    let concepts = model.ecp.concepts();

    let mut hidden = Vec::with_capacity(batch.rows);
    let mut caches = Vec::with_capacity(batch.rows);
    for r in 0..batch.rows {
        let mut rng = dropout.map(|ds| seed::substream(ds.seed, "dropout", &ds.step.to_string(), r as u64));
        let (h, c) = model
            .encoder
            .forward_row(batch.row_tokens(r), batch.row_attention(r), rng.as_mut())?;
        hidden.push(h);
        caches.push(c);
    }

    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for r in 0..batch.rows {
        for (t, l) in batch.row_labels(r).iter().enumerate() {
            if let Some(l) = *l {
                if l as usize >= vocab {
                    return Err(Error::data(
                        batch.keys[r].clone(),
                        format!("MLM label {l} outside vocabulary of {vocab}"),
                    ));
                }
                positions.push((r, t));
                labels.push(Some(l));
            }
        }
    }
    let mut gathered = Array2::zeros((positions.len(), d));
    for (mut row, &(r, t)) in gathered.rows_mut().into_iter().zip(&positions) {
        row.assign(&hidden[r].row(t));
    }
    let mlm_pass = (!positions.is_empty()).then(|| model.mlm.forward(gathered.view()));
    let (mlm, mlm_grad) = match &mlm_pass {
        Some((logits, _)) => mlm_loss_with_grad(logits.view(), &labels),
        None => mlm_loss_with_grad(Array2::<T>::zeros((0, vocab)).view(), &[]),
    };

    let k = batch.mentions.len();
    let mut spans = Array2::zeros((k, 2 * d));
    let mut targets = Array2::zeros((k, concepts));
    let mut valid = Vec::with_capacity(k);
    for (i, m) in batch.mentions.iter().enumerate() {
        if m.target.hot.len() != concepts {
            return Err(Error::Shape(format!(
                "mention target of length {} for {concepts} concepts",
                m.target.hot.len()
            )));
        }
        let h = &hidden[m.row];
        if m.span.end >= h.nrows() {
            return Err(Error::arg(format!("mention span past row {} end", m.row)));
        }
        spans.slice_mut(s![i, ..d]).assign(&h.row(m.span.start));
        spans.slice_mut(s![i, d..]).assign(&h.row(m.span.end));
        for c in m.target.positives() {
            targets[[i, c]] = T::one();
        }
        valid.push(m.target.is_valid());
    }
    let ecp_pass = if k > 0 { Some(model.ecp.logits(spans.view())?) } else { None };
    let (ecp, ecp_grad) = match &ecp_pass {
        Some((logits, _)) => ecp_loss_with_logits(logits.view(), targets.view(), &valid),
        None => ecp_loss_with_logits(Array2::<T>::zeros((0, concepts)).view(), targets.view(), &[]),
    };

    let lam = T::lit(lambda);
    let total = mlm.value + lam * ecp.value;

    if let Some(g) = grads {
        let mut dh: Vec<Array2<T>> = hidden.iter().map(|h| Array2::zeros(h.raw_dim())).collect();
        if let (Some((_, cache)), false) = (&mlm_pass, mlm.skipped) {
            let dx = model.mlm.backward(cache, &mlm_grad, &mut g.mlm);
            for (row, &(r, t)) in dx.rows().into_iter().zip(&positions) {
                let mut target = dh[r].row_mut(t);
                target += &row;
            }
        }
        if let (Some((_, cache)), false, true) = (&ecp_pass, ecp.skipped, lambda != 0.0) {
            let dlogits = ecp_grad * lam;
            let dspans = model.ecp.backward(cache, &dlogits, &mut g.ecp);
            for (row, m) in dspans.rows().into_iter().zip(&batch.mentions) {
                let mut hi = dh[m.row].row_mut(m.span.start);
                hi += &row.slice(s![..d]);
                let mut hj = dh[m.row].row_mut(m.span.end);
                hj += &row.slice(s![d..]);
            }
        }
        for (cache, d_row) in caches.iter().zip(&dh) {
            model.encoder.backward_row(cache, d_row, &mut g.encoder);
        }
    }
    Ok(BatchLoss { mlm, ecp, total })
}

/// Name filter for tensors that must stay fixed: the concept head when the
/// concept loss carries no weight.
pub fn frozen_filter(lambda: f64) -> impl Fn(&str) -> bool {
    move |name: &str| lambda == 0.0 && name.starts_with("ecp.")
}

/// Forward, backward and one optimizer update. A non-finite loss aborts
/// before any parameter changes.
pub fn train_step<T: Scalar>(
    model: &mut ConceptModel<T>,
    optimizer: &mut AdamW<T>,
    batch: &PretrainBatch,
    lambda: f64,
    dropout_seed: u64,
    batch_id: &str,
) -> Result<StepMetrics> {
    let step = optimizer.step + 1;
    let mut grads = model.zeroed();
    let loss = batch_loss(
        model,
        batch,
        lambda,
        Some(DropoutSeed { seed: dropout_seed, step }),
        Some(&mut grads),
    )?;
    let values = [loss.mlm.value, loss.ecp.value, loss.total];
    if values.iter().any(|v| !v.is_finite()) || !grads.all_finite() {
        return Err(Error::NonFinite {
            step,
            batch: batch_id.to_string(),
        });
    }
    optimizer.update(model, &grads, frozen_filter(lambda));
    Ok(StepMetrics {
        step,
        mlm: loss.mlm.value.to_f64().unwrap_or(f64::NAN),
        ecp: loss.ecp.value.to_f64().unwrap_or(f64::NAN),
        total: loss.total.to_f64().unwrap_or(f64::NAN),
    })
}
