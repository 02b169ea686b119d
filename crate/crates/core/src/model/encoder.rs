use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, SelfAttention};
use super::layers::{apply_mask, dropout_mask, gelu_backward, gelu_map, GeluKind, LayerNorm, LayerNormCache, Linear};
use super::params::{join, matrix, matrix_mut, ParamKind, ParamMut, ParamRef, Params};
use crate::corpus::PretrainBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    #[serde(default)]
    pub gelu: GeluKind,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-12
}

impl EncoderConfig {
    /// Two layers of width 64 with four heads.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            intermediate: 256,
            vocab_size,
            max_positions: 128,
            dropout: 0.1,
            gelu: GeluKind::Exact,
            layer_norm_eps: default_eps(),
        }
    }

    pub fn base(vocab_size: usize) -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            intermediate: 3072,
            vocab_size,
            max_positions: 512,
            dropout: 0.1,
            gelu: GeluKind::Exact,
            layer_norm_eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("intermediate", self.intermediate),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings<T> {
    pub word: Array2<T>,
    pub position: Array2<T>,
    pub norm: LayerNorm<T>,
}

struct EmbeddingCache<T> {
    tokens: Vec<usize>,
    norm: LayerNormCache<T>,
    drop: Option<Array2<T>>,
}

impl<T: Scalar> Params<T> for Embeddings<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(matrix(prefix, "word", ParamKind::Weight, &self.word));
        out.push(matrix(prefix, "position", ParamKind::Weight, &self.position));
        self.norm.collect(&join(prefix, "norm"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(matrix_mut(prefix, "word", ParamKind::Weight, &mut self.word));
        out.push(matrix_mut(prefix, "position", ParamKind::Weight, &mut self.position));
        self.norm.collect_mut(&join(prefix, "norm"), out);
    }
}

/// Post-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub attention: SelfAttention<T>,
    pub attention_norm: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
    pub ff_norm: LayerNorm<T>,
}

struct BlockCache<T> {
    attention: AttentionCache<T>,
    drop1: Option<Array2<T>>,
    norm1: LayerNormCache<T>,
    h1: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
    drop2: Option<Array2<T>>,
    norm2: LayerNormCache<T>,
}

impl<T: Scalar> Block<T> {
    fn zeros(c: &EncoderConfig) -> Self {
        Self {
            attention: SelfAttention::zeros(c.hidden, c.heads),
            attention_norm: LayerNorm::new(c.hidden, c.layer_norm_eps),
            ff_in: Linear::zeros(c.hidden, c.intermediate),
            ff_out: Linear::zeros(c.intermediate, c.hidden),
            ff_norm: LayerNorm::new(c.hidden, c.layer_norm_eps),
        }
    }

    fn forward(
        &self,
        x: &Array2<T>,
        key_mask: &[bool],
        c: &EncoderConfig,
        mut rng: Option<&mut Rng>,
    ) -> (Array2<T>, BlockCache<T>) {
        let (mut a, attention) = self.attention.forward(x, key_mask);
        let drop1 = dropout_mask(a.dim(), c.dropout, rng.as_deref_mut());
        apply_mask(&mut a, drop1.as_ref());
        a += x;
        let (h1, norm1) = self.attention_norm.forward(&a);
        let pre = self.ff_in.forward(h1.view());
        let act = gelu_map(&pre, c.gelu);
        let mut f = self.ff_out.forward(act.view());
        let drop2 = dropout_mask(f.dim(), c.dropout, rng);
        apply_mask(&mut f, drop2.as_ref());
        f += &h1;
        let (out, norm2) = self.ff_norm.forward(&f);
        let cache = BlockCache {
            attention,
            drop1,
            norm1,
            h1,
            pre,
            act,
            drop2,
            norm2,
        };
        (out, cache)
    }

    fn backward(&self, cache: &BlockCache<T>, dy: &Array2<T>, c: &EncoderConfig, grad: &mut Block<T>) -> Array2<T> {
        let ds2 = self.ff_norm.backward(&cache.norm2, dy, &mut grad.ff_norm);
        let mut df = ds2.clone();
        apply_mask(&mut df, cache.drop2.as_ref());
        let dact = self.ff_out.backward(cache.act.view(), &df, &mut grad.ff_out);
        let dpre = gelu_backward(&cache.pre, &dact, c.gelu);
        let mut dh1 = self.ff_in.backward(cache.h1.view(), &dpre, &mut grad.ff_in);
        dh1 += &ds2;
        let ds1 = self.attention_norm.backward(&cache.norm1, &dh1, &mut grad.attention_norm);
        let mut da = ds1.clone();
        apply_mask(&mut da, cache.drop1.as_ref());
        let mut dx = self.attention.backward(&cache.attention, &da, &mut grad.attention);
        dx += &ds1;
        dx
    }
}

impl<T: Scalar> Params<T> for Block<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.attention.collect(&join(prefix, "attention"), out);
        self.attention_norm.collect(&join(prefix, "attention_norm"), out);
        self.ff_in.collect(&join(prefix, "ff_in"), out);
        self.ff_out.collect(&join(prefix, "ff_out"), out);
        self.ff_norm.collect(&join(prefix, "ff_norm"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.attention.collect_mut(&join(prefix, "attention"), out);
        self.attention_norm.collect_mut(&join(prefix, "attention_norm"), out);
        self.ff_in.collect_mut(&join(prefix, "ff_in"), out);
        self.ff_out.collect_mut(&join(prefix, "ff_out"), out);
        self.ff_norm.collect_mut(&join(prefix, "ff_norm"), out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub embeddings: Embeddings<T>,
    pub blocks: Vec<Block<T>>,
}

/// Activations retained by [`Encoder::forward_row`] for the backward pass.
pub struct EncoderCache<T> {
    embeddings: EmbeddingCache<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            embeddings: Embeddings {
                word: Array2::zeros((config.vocab_size, config.hidden)),
                position: Array2::zeros((config.max_positions, config.hidden)),
                norm: LayerNorm::new(config.hidden, config.layer_norm_eps),
            },
            blocks: (0..config.layers).map(|_| Block::zeros(config)).collect(),
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Encodes one sequence. `key_mask[j]` is false at padding; padding
    /// positions still receive outputs but are never attended to. Passing
    /// an RNG enables dropout.
    pub fn forward_row(
        &self,
        tokens: &[u32],
        key_mask: &[bool],
        mut rng: Option<&mut Rng>,
    ) -> Result<(Array2<T>, EncoderCache<T>)> {
        let c = &self.config;
        let n = tokens.len();
        if n == 0 {
            return Err(Error::arg("empty sequence"));
        }
        if key_mask.len() != n {
            return Err(Error::Shape(format!("mask length {} != sequence length {n}", key_mask.len())));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::arg("sequence has no attendable position"));
        }
        if n > c.max_positions {
            return Err(Error::arg(format!(
                "position index {} exceeds max positions {}",
                n - 1,
                c.max_positions
            )));
        }
        let mut ids = Vec::with_capacity(n);
        for &t in tokens {
            let t = t as usize;
            if t >= c.vocab_size {
                return Err(Error::arg(format!("token id {t} outside vocabulary of {}", c.vocab_size)));
            }
            ids.push(t);
        }
        let mut x = Array2::zeros((n, c.hidden));
        for (mut row, &t) in x.rows_mut().into_iter().zip(&ids) {
            row.assign(&self.embeddings.word.row(t));
        }
        x += &self.embeddings.position.slice(s![..n, ..]);
        let (mut x, norm) = self.embeddings.norm.forward(&x);
        let drop = dropout_mask(x.dim(), c.dropout, rng.as_deref_mut());
        apply_mask(&mut x, drop.as_ref());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&x, key_mask, c, rng.as_deref_mut());
            caches.push(cache);
            x = y;
        }
        let cache = EncoderCache {
            embeddings: EmbeddingCache { tokens: ids, norm, drop },
            blocks: caches,
        };
        Ok((x, cache))
    }

    /// Accumulates all encoder gradients for `dy = dL/d(final states)`.
    pub fn backward_row(&self, cache: &EncoderCache<T>, dy: &Array2<T>, grad: &mut Encoder<T>) {
        let mut d = dy.clone();
        for ((block, bc), g) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            d = block.backward(bc, &d, &self.config, g);
        }
        let ec = &cache.embeddings;
        apply_mask(&mut d, ec.drop.as_ref());
        let de = self.embeddings.norm.backward(&ec.norm, &d, &mut grad.embeddings.norm);
        let n = de.nrows();
        let mut pos = grad.embeddings.position.slice_mut(s![..n, ..]);
        pos += &de;
        for (row, &t) in de.rows().into_iter().zip(&ec.tokens) {
            let mut w = grad.embeddings.word.row_mut(t);
            w += &row;
        }
    }

    /// Final hidden states for every row of a batch, eval mode:
    /// shape `(rows, width, hidden)`.
    pub fn encode(&self, batch: &PretrainBatch) -> Result<Array3<T>> {
        let mut out = Array3::zeros((batch.rows, batch.width, self.config.hidden));
        for r in 0..batch.rows {
            let (h, _) = self.forward_row(batch.row_tokens(r), batch.row_attention(r), None)?;
            out.slice_mut(s![r, .., ..]).assign(&h);
        }
        Ok(out)
    }
}

impl<T: Scalar> Params<T> for Encoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.embeddings.collect(&join(prefix, "embeddings"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("layer{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.embeddings.collect_mut(&join(prefix, "embeddings"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("layer{i}")), out);
        }
    }
}
