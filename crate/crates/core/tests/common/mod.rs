#![allow(dead_code)]
pub mod oracles;

use concept_core::corpus::{build_batch, ExampleMention, MentionSpan, PretrainBatch, PretrainExample};
use concept_core::model::{ConceptModel, EncoderConfig, GeluKind, Params};
use concept_core::pretrain::batch_loss;
use concept_core::scalar::Scalar;
use concept_core::taxonomy::ConceptTarget;

pub fn tiny_config(vocab: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        intermediate: 16,
        vocab_size: vocab,
        max_positions: 16,
        dropout: 0.0,
        gelu: GeluKind::Exact,
        layer_norm_eps: 1e-12,
    }
}

fn target(hot: &[usize], n: usize) -> ConceptTarget {
    let mut v = vec![false; n];
    for &k in hot {
        v[k] = true;
    }
    ConceptTarget { hot: v, unknown: false }
}

/// Two rows of unequal length with MLM labels, mentions (one of them
/// single-token) and padding.
pub fn check_batch(concepts: usize) -> PretrainBatch {
    let mut a = PretrainExample::new(
        "a".into(),
        vec![0, 7, 2, 2, 9, 11, 1],
        vec![
            ExampleMention { span: MentionSpan::new("x", 2, 3), target: target(&[1, 3], concepts), ecp_masked: true },
            ExampleMention { span: MentionSpan::new("y", 5, 5), target: target(&[0], concepts), ecp_masked: false },
        ],
    );
    a.mlm_labels[1] = Some(13);
    a.mlm_labels[4] = Some(9);
    let mut b = PretrainExample::new(
        "b".into(),
        vec![0, 14, 6, 1],
        vec![ExampleMention { span: MentionSpan::new("z", 1, 2), target: target(&[4], concepts), ecp_masked: false }],
    );
    b.mlm_labels[2] = Some(2);
    build_batch(&[a, b], 16).unwrap()
}

pub fn loss_of<T: Scalar>(model: &ConceptModel<T>, batch: &PretrainBatch, lambda: f64) -> f64 {
    batch_loss(model, batch, lambda, None, None).unwrap().total.to_f64().unwrap()
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|)` (Euclidean norms)
/// between `analytic` and central differences of the f64 loss. Tensors whose
/// gradient vanishes identically (both norms below 1e-8, e.g. attention key
/// biases under softmax shift invariance) count as exact.
pub fn max_relative_error<T: Scalar>(
    model64: &ConceptModel<f64>,
    analytic: &ConceptModel<T>,
    batch: &PretrainBatch,
    lambda: f64,
    h: f64,
) -> Vec<(String, f64)> {
    let mut probe = model64.clone();
    let names: Vec<(String, usize)> = model64.params().iter().map(|p| (p.name.clone(), p.data.len())).collect();
    let grads = analytic.params();
    let mut out = Vec::new();
    for (t, (name, len)) in names.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for i in 0..*len {
            let orig = probe.params()[t].data[i];
            probe.params_mut()[t].data[i] = orig + h;
            let up = loss_of(&probe, batch, lambda);
            probe.params_mut()[t].data[i] = orig - h;
            let down = loss_of(&probe, batch, lambda);
            probe.params_mut()[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[t].data[i].to_f64().unwrap();
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel = if denom < 1e-8 { 0.0 } else { diff2.sqrt() / denom };
        out.push((name.clone(), rel));
    }
    out
}

pub fn cast<T: Scalar>(m: &ConceptModel<f64>) -> ConceptModel<T> {
    let mut out = ConceptModel::<T>::zeros(m.config(), m.ecp.concepts()).unwrap();
    for (dst, src) in out.params_mut().into_iter().zip(m.params()) {
        for (d, s) in dst.data.iter_mut().zip(src.data) {
            *d = T::lit(*s);
        }
    }
    out
}

/// Gradient of the joint loss, returned in the model's own layout.
pub fn analytic_grads<T: Scalar>(model: &ConceptModel<T>, batch: &PretrainBatch, lambda: f64) -> ConceptModel<T> {
    let mut g = model.zeroed();
    batch_loss(model, batch, lambda, None, Some(&mut g)).unwrap();
    g
}

/// A 1-layer, width-8 model with non-trivial norms and biases.
pub fn gradcheck_model(concepts: usize, seed: u64) -> ConceptModel<f64> {
    let mut m = ConceptModel::<f64>::new(&tiny_config(16), concepts, seed).unwrap();
    // larger weights than the 0.02 default so every term is well above
    // finite-difference noise
    for p in m.params_mut() {
        let scale = if p.name.ends_with("gamma") { 0.0 } else { 15.0 };
        for (i, x) in p.data.iter_mut().enumerate() {
            *x = *x * scale + if p.name.ends_with("gamma") { 1.0 + 0.05 * ((i % 5) as f64) } else { 0.0 };
            if p.name.ends_with("bias") || p.name.ends_with("beta") {
                *x = 0.02 * (((i * 7) % 11) as f64 - 5.0);
            }
        }
    }
    m
}

use concept_core::corpus::prepare_corpus;
use concept_core::synth::{World, WorldSpec};

/// Five concepts, a few hundred documents.
pub fn small_world() -> (World, Vec<PretrainExample>) {
    let spec = WorldSpec {
        n_concepts: 5,
        entities_per_concept: 12,
        heldout_per_concept: 2,
        docs: 400,
        kg_relations: 4,
        eval_docs_per_entity: 2,
        ..Default::default()
    };
    let world = World::generate(&spec).unwrap();
    let tax = &world.taxonomy;
    let (examples, _) = prepare_corpus(&world.corpus.train, &tax.tokenizer, &tax.taxonomy, &tax.vocab, 32).unwrap();
    (world, examples)
}

/// One layer of width 16 with dropout on.
pub fn small_config(vocab: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        intermediate: 32,
        vocab_size: vocab,
        max_positions: 32,
        dropout: 0.1,
        gelu: GeluKind::Exact,
        layer_norm_eps: 1e-12,
    }
}
