//! Named parameter views shared by the optimizer, initializer and checkpoints.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrices and embeddings: decayed, truncated-normal init.
    Weight,
    Bias,
    /// Normalization gain: not decayed, initialized to one.
    Gain,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a mut [T],
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn matrix<'a, T: Scalar>(prefix: &str, name: &str, kind: ParamKind, a: &'a Array2<T>) -> ParamRef<'a, T> {
    ParamRef {
        name: join(prefix, name),
        shape: a.shape().to_vec(),
        kind,
        data: a.as_slice().expect("parameters are contiguous"),
    }
}

pub(crate) fn matrix_mut<'a, T: Scalar>(
    prefix: &str,
    name: &str,
    kind: ParamKind,
    a: &'a mut Array2<T>,
) -> ParamMut<'a, T> {
    ParamMut {
        name: join(prefix, name),
        shape: a.shape().to_vec(),
        kind,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    }
}

pub(crate) fn vector<'a, T: Scalar>(prefix: &str, name: &str, kind: ParamKind, a: &'a Array1<T>) -> ParamRef<'a, T> {
    ParamRef {
        name: join(prefix, name),
        shape: vec![a.len()],
        kind,
        data: a.as_slice().expect("parameters are contiguous"),
    }
}

pub(crate) fn vector_mut<'a, T: Scalar>(
    prefix: &str,
    name: &str,
    kind: ParamKind,
    a: &'a mut Array1<T>,
) -> ParamMut<'a, T> {
    ParamMut {
        name: join(prefix, name),
        shape: vec![a.len()],
        kind,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    }
}

/// A structure owning trainable tensors. Gradients use the same type.
pub trait Params<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>);

    fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut v = Vec::new();
        self.collect("", &mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut v = Vec::new();
        self.collect_mut("", &mut v);
        v
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Same shapes, all zeros.
    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }

    fn fill(&mut self, value: T) {
        for p in self.params_mut() {
            p.data.fill(value);
        }
    }

    fn add_assign_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += *s;
            }
        }
    }

    /// Weights from a truncated normal (std `std`, cut at two deviations),
    /// biases zero, gains one. Each tensor draws from its own stream keyed by
    /// its name, so adding or resizing one tensor leaves the others unchanged.
    fn initialize(&mut self, seed: u64, std: f64) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for p in self.params_mut() {
            match p.kind {
                ParamKind::Bias => p.data.fill(T::zero()),
                ParamKind::Gain => p.data.fill(T::one()),
                ParamKind::Weight => {
                    let mut rng = seed::substream(seed, "init", &p.name, 0);
                    for x in p.data.iter_mut() {
                        let v = loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 2.0 * std {
                                break v;
                            }
                        };
                        *x = T::lit(v);
                    }
                }
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }
}
