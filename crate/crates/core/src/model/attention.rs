use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::Linear;
use super::params::{join, ParamMut, ParamRef, Params};
use crate::scalar::Scalar;

/// Multi-head self-attention with a key padding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub heads: usize,
}

pub struct AttentionCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn zeros(hidden: usize, heads: usize) -> Self {
        Self {
            query: Linear::zeros(hidden, hidden),
            key: Linear::zeros(hidden, hidden),
            value: Linear::zeros(hidden, hidden),
            output: Linear::zeros(hidden, hidden),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.outputs() / self.heads
    }

    /// `key_mask[j]` is false for padding keys, which receive zero weight.
    /// At least one key must be unmasked.
    pub fn forward(&self, x: &Array2<T>, key_mask: &[bool]) -> (Array2<T>, AttentionCache<T>) {
        let n = x.nrows();
        let dh = self.head_dim();
        let scale = T::one() / T::of_usize(dh).sqrt();
        let q = self.query.forward(x.view());
        let k = self.key.forward(x.view());
        let v = self.value.forward(x.view());
        let mut ctx = Array2::zeros((n, self.query.outputs()));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            for mut row in scores.rows_mut() {
                let mut max = T::neg_infinity();
                for (j, val) in row.iter_mut().enumerate() {
                    if key_mask[j] {
                        *val *= scale;
                        max = max.max(*val);
                    }
                }
                let mut sum = T::zero();
                for (j, val) in row.iter_mut().enumerate() {
                    if key_mask[j] {
                        *val = (*val - max).exp();
                        sum += *val;
                    } else {
                        *val = T::zero();
                    }
                }
                row.mapv_inplace(|p| p / sum);
            }
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(ctx.view());
        let cache = AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            ctx,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &AttentionCache<T>, dy: &Array2<T>, grad: &mut SelfAttention<T>) -> Array2<T> {
        let dh = self.head_dim();
        let scale = T::one() / T::of_usize(dh).sqrt();
        let dctx = self.output.backward(cache.ctx.view(), dy, &mut grad.output);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = dctx_h.dot(&cache.v.slice(cols).t());
            let rowdot = (&ds * p).sum_axis(Axis(1));
            for ((mut drow, prow), &rd) in ds.rows_mut().into_iter().zip(p.rows()).zip(&rowdot) {
                drow.zip_mut_with(&prow, |d, &pv| *d = pv * (*d - rd) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x: ArrayView2<'_, T> = cache.x.view();
        let mut dx = self.query.backward(x, &dq, &mut grad.query);
        dx += &self.key.backward(x, &dk, &mut grad.key);
        dx += &self.value.backward(x, &dv, &mut grad.value);
        dx
    }
}

impl<T: Scalar> Params<T> for SelfAttention<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.query.collect(&join(prefix, "query"), out);
        self.key.collect(&join(prefix, "key"), out);
        self.value.collect(&join(prefix, "value"), out);
        self.output.collect(&join(prefix, "output"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.query.collect_mut(&join(prefix, "query"), out);
        self.key.collect_mut(&join(prefix, "key"), out);
        self.value.collect_mut(&join(prefix, "value"), out);
        self.output.collect_mut(&join(prefix, "output"), out);
    }
}
