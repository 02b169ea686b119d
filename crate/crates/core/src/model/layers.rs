use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{matrix, matrix_mut, vector, vector_mut, ParamKind, ParamMut, ParamRef, Params};
use crate::scalar::Scalar;
use crate::seed::Rng;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// GELU flavour. The tanh form stays within 1e-3 of the exact form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeluKind {
    #[default]
    Exact,
    Tanh,
}

#[inline]
pub fn gelu<T: Scalar>(x: T, kind: GeluKind) -> T {
    let half = T::lit(0.5);
    match kind {
        GeluKind::Exact => half * x * (T::one() + (x * T::lit(INV_SQRT_2)).erf()),
        GeluKind::Tanh => {
            let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(0.044_715) * x * x * x);
            half * x * (T::one() + inner.tanh())
        }
    }
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T, kind: GeluKind) -> T {
    let half = T::lit(0.5);
    match kind {
        GeluKind::Exact => {
            let cdf = half * (T::one() + (x * T::lit(INV_SQRT_2)).erf());
            let pdf = T::lit(INV_SQRT_2PI) * (-(x * x) * half).exp();
            cdf + x * pdf
        }
        GeluKind::Tanh => {
            let c = T::lit(SQRT_2_OVER_PI);
            let a = T::lit(0.044_715);
            let t = (c * (x + a * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
        }
    }
}

pub fn gelu_map<T: Scalar>(x: &Array2<T>, kind: GeluKind) -> Array2<T> {
    x.mapv(|v| gelu(v, kind))
}

/// `dy * gelu'(pre)`.
pub fn gelu_backward<T: Scalar>(pre: &Array2<T>, dy: &Array2<T>, kind: GeluKind) -> Array2<T> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(pre).for_each(|d, &x| *d *= gelu_grad(x, kind));
    out
}

/// Fully connected layer `y = x W^T + b`, weight stored as (out, in).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, T>, dy: &Array2<T>, grad: &mut Linear<T>) -> Array2<T> {
        general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(matrix(prefix, "weight", ParamKind::Weight, &self.weight));
        out.push(vector(prefix, "bias", ParamKind::Bias, &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(matrix_mut(prefix, "weight", ParamKind::Weight, &mut self.weight));
        out.push(vector_mut(prefix, "bias", ParamKind::Bias, &mut self.bias));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub eps: f64,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize, eps: f64) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps,
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let n = T::of_usize(x.ncols());
        let eps = T::lit(self.eps);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.iter().copied().sum::<T>() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / n;
            *s = T::one() / (var + eps).sqrt();
            let k = *s;
            row.mapv_inplace(|v| v * k);
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Array2<T>, grad: &mut LayerNorm<T>) -> Array2<T> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = T::of_usize(dy.ncols());
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let sum = row.iter().copied().sum::<T>();
            let dot = row.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            Zip::from(&mut row).and(&xh).for_each(|d, &h| {
                *d = s / n * (n * *d - sum - h * dot);
            });
        }
        dx
    }
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(vector(prefix, "gamma", ParamKind::Gain, &self.gamma));
        out.push(vector(prefix, "beta", ParamKind::Bias, &self.beta));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(vector_mut(prefix, "gamma", ParamKind::Gain, &mut self.gamma));
        out.push(vector_mut(prefix, "beta", ParamKind::Bias, &mut self.beta));
    }
}

/// Inverted dropout. Returns the scaled keep mask, or `None` when inactive.
pub fn dropout_mask<T: Scalar>(shape: (usize, usize), rate: f64, rng: Option<&mut Rng>) -> Option<Array2<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    }))
}

pub fn apply_mask<T: Scalar>(x: &mut Array2<T>, mask: Option<&Array2<T>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0f64, GeluKind::Exact), 0.0);
        // 0.5 * 1 * (1 + erf(1/sqrt 2)) = Phi(1)
        assert!((gelu(1.0f64, GeluKind::Exact) - 0.841_344_746_068_542_9).abs() < 1e-12);
        for i in -60..=60 {
            let x = i as f64 / 10.0;
            assert!((gelu(x, GeluKind::Tanh) - gelu(x, GeluKind::Exact)).abs() < 1e-3);
            for kind in [GeluKind::Exact, GeluKind::Tanh] {
                let h = 1e-5;
                let fd = (gelu(x + h, kind) - gelu(x - h, kind)) / (2.0 * h);
                assert!((fd - gelu_grad(x, kind)).abs() < 1e-8, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn linear_matches_loops() {
        let lin = Linear {
            weight: array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]],
            bias: array![0.1, -0.2],
        };
        let x = array![[1.0, 0.0, 2.0]];
        let y = lin.forward(x.view());
        assert!((y[[0, 0]] - 7.1f64).abs() < 1e-12);
        assert!((y[[0, 1]] + 1.2f64).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_normalizes() {
        let ln = LayerNorm::<f64>::new(4, 1e-12);
        let (y, _) = ln.forward(&array![[1.0, 2.0, 3.0, 4.0]]);
        let mean: f64 = y.sum() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
