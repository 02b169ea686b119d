use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};

use super::layers::{gelu_backward, gelu_map, GeluKind, LayerNorm, LayerNormCache, Linear};
use super::params::{join, ParamMut, ParamRef, Params};
use crate::corpus::MentionSpan;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// `[h_i ; h_j]` for the boundary tokens of `span`.
pub fn span_representation<T: Scalar>(hidden: ArrayView2<'_, T>, span: &MentionSpan) -> Result<Array1<T>> {
    let n = hidden.nrows();
    if span.start > span.end || span.end >= n {
        return Err(Error::arg(format!(
            "span [{}, {}] outside sequence of length {n}",
            span.start, span.end
        )));
    }
    Ok(concatenate![Axis(0), hidden.row(span.start), hidden.row(span.end)])
}

/// Transform (dense, GELU, layer norm) followed by a vocabulary decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmHead<T> {
    pub transform: Linear<T>,
    pub norm: LayerNorm<T>,
    pub decoder: Linear<T>,
    pub gelu: GeluKind,
}

pub struct MlmCache<T> {
    x: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
    norm: LayerNormCache<T>,
    normed: Array2<T>,
}

impl<T: Scalar> MlmHead<T> {
    pub fn zeros(hidden: usize, vocab: usize, eps: f64, gelu: GeluKind) -> Self {
        Self {
            transform: Linear::zeros(hidden, hidden),
            norm: LayerNorm::new(hidden, eps),
            decoder: Linear::zeros(hidden, vocab),
            gelu,
        }
    }

    /// Logits for each row of `x` (one row per position).
    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, MlmCache<T>) {
        let pre = self.transform.forward(x);
        let act = gelu_map(&pre, self.gelu);
        let (normed, norm) = self.norm.forward(&act);
        let logits = self.decoder.forward(normed.view());
        let cache = MlmCache {
            x: x.to_owned(),
            pre,
            act,
            norm,
            normed,
        };
        (logits, cache)
    }

    pub fn backward(&self, cache: &MlmCache<T>, dlogits: &Array2<T>, grad: &mut MlmHead<T>) -> Array2<T> {
        let dnormed = self.decoder.backward(cache.normed.view(), dlogits, &mut grad.decoder);
        let dact = self.norm.backward(&cache.norm, &dnormed, &mut grad.norm);
        debug_assert_eq!(dact.dim(), cache.act.dim());
        let dpre = gelu_backward(&cache.pre, &dact, self.gelu);
        self.transform.backward(cache.x.view(), &dpre, &mut grad.transform)
    }
}

/// Logits over the vocabulary at every position: `(batch, length, vocab)`.
pub fn mlm_forward<T: Scalar>(hidden: &Array3<T>, head: &MlmHead<T>) -> Result<Array3<T>> {
    let (b, n, d) = hidden.dim();
    if d != head.transform.inputs() {
        return Err(Error::Shape(format!(
            "hidden size {d} does not match MLM head input {}",
            head.transform.inputs()
        )));
    }
    let v = head.decoder.outputs();
    let mut out = Array3::zeros((b, n, v));
    for r in 0..b {
        let (logits, _) = head.forward(hidden.slice(s![r, .., ..]));
        out.slice_mut(s![r, .., ..]).assign(&logits);
    }
    Ok(out)
}

/// Two-layer concept classifier over span representations:
/// `sigmoid(W_c gelu(W_u [h_i; h_j] + b_u) + b_c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcpHead<T> {
    /// `W_u`, `b_u`: 2d to d.
    pub hidden: Linear<T>,
    /// `W_c`, `b_c`: d to |C|.
    pub output: Linear<T>,
    pub gelu: GeluKind,
}

pub struct EcpCache<T> {
    spans: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

impl<T: Scalar> EcpHead<T> {
    pub fn zeros(hidden: usize, concepts: usize, gelu: GeluKind) -> Self {
        Self {
            hidden: Linear::zeros(2 * hidden, hidden),
            output: Linear::zeros(hidden, concepts),
            gelu,
        }
    }

    pub fn concepts(&self) -> usize {
        self.output.outputs()
    }

    /// Pre-sigmoid scores, one row per span representation.
    pub fn logits(&self, spans: ArrayView2<'_, T>) -> Result<(Array2<T>, EcpCache<T>)> {
        if spans.ncols() != self.hidden.inputs() {
            return Err(Error::Shape(format!(
                "span representation of width {} but head expects {}",
                spans.ncols(),
                self.hidden.inputs()
            )));
        }
        let pre = self.hidden.forward(spans);
        let act = gelu_map(&pre, self.gelu);
        let logits = self.output.forward(act.view());
        Ok((
            logits,
            EcpCache {
                spans: spans.to_owned(),
                pre,
                act,
            },
        ))
    }

    /// Returns `dL/d spans`.
    pub fn backward(&self, cache: &EcpCache<T>, dlogits: &Array2<T>, grad: &mut EcpHead<T>) -> Array2<T> {
        let dact = self.output.backward(cache.act.view(), dlogits, &mut grad.output);
        let dpre = gelu_backward(&cache.pre, &dact, self.gelu);
        self.hidden.backward(cache.spans.view(), &dpre, &mut grad.hidden)
    }

    pub fn probabilities(&self, spans: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.logits(spans)?.0.mapv(sigmoid))
    }
}

/// Concept probabilities for one span representation.
pub fn ecp_forward<T: Scalar>(span: ArrayView1<'_, T>, head: &EcpHead<T>) -> Result<Array1<T>> {
    let probs = head.probabilities(span.insert_axis(Axis(0)))?;
    Ok(probs.row(0).to_owned())
}

impl<T: Scalar> Params<T> for MlmHead<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.transform.collect(&join(prefix, "transform"), out);
        self.norm.collect(&join(prefix, "norm"), out);
        self.decoder.collect(&join(prefix, "decoder"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.transform.collect_mut(&join(prefix, "transform"), out);
        self.norm.collect_mut(&join(prefix, "norm"), out);
        self.decoder.collect_mut(&join(prefix, "decoder"), out);
    }
}

impl<T: Scalar> Params<T> for EcpHead<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.hidden.collect(&join(prefix, "hidden"), out);
        self.output.collect(&join(prefix, "output"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.hidden.collect_mut(&join(prefix, "hidden"), out);
        self.output.collect_mut(&join(prefix, "output"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::gelu;
    use crate::model::params::Params;
    use crate::seed;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, rng: &mut crate::seed::Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn span_is_manual_concat() {
        let mut rng = seed::stream(1, "t");
        let h = random_matrix(6, 3, &mut rng);
        let rep = span_representation(h.view(), &MentionSpan::new("e", 1, 4)).unwrap();
        let mut manual = Vec::new();
        for k in 0..3 {
            manual.push(h[[1, k]]);
        }
        for k in 0..3 {
            manual.push(h[[4, k]]);
        }
        assert_eq!(rep.to_vec(), manual);
        let single = span_representation(h.view(), &MentionSpan::new("e", 2, 2)).unwrap();
        assert_eq!(single.slice(s![..3]), single.slice(s![3..]));
        assert!(span_representation(h.view(), &MentionSpan::new("e", 2, 6)).is_err());
    }

    #[test]
    fn zero_head_gives_one_half() {
        let head = EcpHead::<f64>::zeros(4, 3, GeluKind::Exact);
        let p = ecp_forward(Array1::from_elem(8, 0.7).view(), &head).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        assert!(ecp_forward(Array1::zeros(6).view(), &head).is_err());
    }

    #[test]
    fn ecp_matches_scalar_loops() {
        let (d, c) = (3, 4);
        let mut head = EcpHead::<f64>::zeros(d, c, GeluKind::Exact);
        head.initialize(9, 0.5);
        head.hidden.bias.mapv_inplace(|_| 0.1);
        head.output.bias.mapv_inplace(|_| -0.2);
        let mut rng = seed::stream(2, "t");
        let x: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = ecp_forward(Array1::from(x.clone()).view(), &head).unwrap();
        for k in 0..c {
            let mut z = head.output.bias[k];
            for u in 0..d {
                let mut a = head.hidden.bias[u];
                for (i, xi) in x.iter().enumerate() {
                    a += head.hidden.weight[[u, i]] * xi;
                }
                z += head.output.weight[[k, u]] * gelu(a, GeluKind::Exact);
            }
            let expected = 1.0 / (1.0 + (-z).exp());
            assert!((p[k] - expected).abs() < 1e-12);
            assert!(p[k] > 0.0 && p[k] < 1.0);
        }
    }

    #[test]
    fn ecp_permutation_equivariant() {
        let mut head = EcpHead::<f64>::zeros(3, 4, GeluKind::Exact);
        head.initialize(4, 0.5);
        let perm = [2, 0, 3, 1];
        let mut permuted = head.clone();
        for (new, &old) in perm.iter().enumerate() {
            permuted.output.weight.row_mut(new).assign(&head.output.weight.row(old));
            permuted.output.bias[new] = head.output.bias[old];
        }
        let x = Array1::from(vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.7]);
        let p = ecp_forward(x.view(), &head).unwrap();
        let q = ecp_forward(x.view(), &permuted).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(q[new], p[old]);
        }
    }

    #[test]
    fn mlm_shape_and_uniform_at_zero() {
        let head = MlmHead::<f64>::zeros(4, 7, 1e-12, GeluKind::Exact);
        let h = Array3::from_elem((2, 3, 4), 0.3);
        let logits = mlm_forward(&h, &head).unwrap();
        assert_eq!(logits.dim(), (2, 3, 7));
        assert!(logits.iter().all(|&z| z == 0.0));
        assert!(mlm_forward(&Array3::zeros((2, 3, 5)), &head).is_err());
    }

    #[test]
    fn mlm_matches_loop_oracle() {
        let (b, n, d, v) = (2, 3, 4, 5);
        let mut head = MlmHead::<f64>::zeros(d, v, 1e-12, GeluKind::Exact);
        head.initialize(5, 0.5);
        head.norm.gamma.mapv_inplace(|_| 1.3);
        head.norm.beta.mapv_inplace(|_| 0.1);
        let mut rng = seed::stream(3, "t");
        let h = Array3::from_shape_simple_fn((b, n, d), || rng.random_range(-1.0..1.0));
        let logits = mlm_forward(&h, &head).unwrap();
        for r in 0..b {
            for t in 0..n {
                let mut a = vec![0.0; d];
                for (o, ao) in a.iter_mut().enumerate() {
                    let mut z = head.transform.bias[o];
                    for i in 0..d {
                        z += head.transform.weight[[o, i]] * h[[r, t, i]];
                    }
                    *ao = gelu(z, GeluKind::Exact);
                }
                let mean = a.iter().sum::<f64>() / d as f64;
                let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                let normed: Vec<f64> = a
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (x - mean) / (var + 1e-12).sqrt() * head.norm.gamma[k] + head.norm.beta[k])
                    .collect();
                for w in 0..v {
                    let mut z = head.decoder.bias[w];
                    for k in 0..d {
                        z += head.decoder.weight[[w, k]] * normed[k];
                    }
                    assert!((logits[[r, t, w]] - z).abs() < 1e-10);
                }
            }
        }
    }
}
