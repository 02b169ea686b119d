//! AdamW with bias correction and decoupled weight decay.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::{decode_tensors, encode_tensors, load_params};
use crate::model::{ParamKind, ParamRef, Params};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments, one buffer per parameter tensor in
/// [`Params::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new<P: Params<T>>(params: &P, config: AdamWConfig) -> Self {
        let ps = params.params();
        Self {
            config,
            step: 0,
            names: ps.iter().map(|p| p.name.clone()).collect(),
            shapes: ps.iter().map(|p| p.shape.clone()).collect(),
            m: ps.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: ps.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    /// One update. Tensors for which `frozen(name)` holds are left
    /// untouched, moments included. Decay skips biases and gains.
    pub fn update<P: Params<T>>(&mut self, params: &mut P, grads: &P, frozen: impl Fn(&str) -> bool) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::lit(c.lr);
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let bc1 = one - T::lit(c.beta1.powi(t));
        let bc2 = one - T::lit(c.beta2.powi(t));
        let eps = T::lit(c.eps);
        let wd = T::lit(c.weight_decay);
        let gs = grads.params();
        for (((p, g), m), v) in params.params_mut().into_iter().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            debug_assert_eq!(p.name, g.name);
            if frozen(&p.name) {
                continue;
            }
            let decay = p.kind == ParamKind::Weight && c.weight_decay > 0.0;
            for (((x, &gi), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                let mut delta = mhat / (vhat.sqrt() + eps);
                if decay {
                    delta += wd * *x;
                }
                *x -= lr * delta;
            }
        }
    }

    /// Moments as a tensor file with `m.` and `v.` name prefixes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut refs = Vec::new();
        for (tag, bufs) in [("m", &self.m), ("v", &self.v)] {
            for ((name, shape), data) in self.names.iter().zip(&self.shapes).zip(bufs.iter()) {
                refs.push(ParamRef {
                    name: format!("{tag}.{name}"),
                    shape: shape.clone(),
                    kind: ParamKind::Weight,
                    data,
                });
            }
        }
        encode_tensors::<T>(&refs)
    }

    pub fn load_moments(&mut self, bytes: &[u8], origin: &Path, step: u64) -> Result<()> {
        let tensors = decode_tensors(bytes, &origin.display().to_string())?;
        let mut moments = Moments {
            names: &self.names,
            shapes: &self.shapes,
            m: &mut self.m,
            v: &mut self.v,
        };
        load_params(&mut moments, &tensors, "", true)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", origin.display())))?;
        self.step = step;
        Ok(())
    }
}

struct Moments<'s, T> {
    names: &'s [String],
    shapes: &'s [Vec<usize>],
    m: &'s mut Vec<Vec<T>>,
    v: &'s mut Vec<Vec<T>>,
}

impl<T: Scalar> Params<T> for Moments<'_, T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        for (tag, bufs) in [("m", &*self.m), ("v", &*self.v)] {
            for ((name, shape), data) in self.names.iter().zip(self.shapes).zip(bufs.iter()) {
                out.push(ParamRef {
                    name: format!("{prefix}{tag}.{name}"),
                    shape: shape.clone(),
                    kind: ParamKind::Weight,
                    data,
                });
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<crate::model::ParamMut<'a, T>>) {
        let names = self.names;
        let shapes = self.shapes;
        for (tag, bufs) in [("m", &mut *self.m), ("v", &mut *self.v)] {
            for ((name, shape), data) in names.iter().zip(shapes).zip(bufs.iter_mut()) {
                out.push(crate::model::ParamMut {
                    name: format!("{prefix}{tag}.{name}"),
                    shape: shape.clone(),
                    kind: ParamKind::Weight,
                    data,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Linear;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Linear::<f64>::zeros(2, 1);
        p.weight[[0, 0]] = 1.0;
        let mut g = p.zeroed();
        g.weight[[0, 0]] = 0.5;
        g.weight[[0, 1]] = -3.0;
        g.bias[0] = 2.0;
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, eps: 0.0, ..Default::default() };
        let mut opt = AdamW::new(&p, cfg);
        opt.update(&mut p, &g, |_| false);
        assert!((p.weight[[0, 0]] - 0.9).abs() < 1e-12);
        assert!((p.weight[[0, 1]] - 0.1).abs() < 1e-12);
        assert!((p.bias[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn decay_skips_biases_and_frozen() {
        let mut p = Linear::<f64>::zeros(1, 1);
        p.weight[[0, 0]] = 1.0;
        p.bias[0] = 1.0;
        let g = p.zeroed();
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(&p, cfg);
        opt.update(&mut p, &g, |_| false);
        assert!((p.weight[[0, 0]] - 0.95).abs() < 1e-12);
        assert_eq!(p.bias[0], 1.0);
        let before = p.clone();
        opt.update(&mut p, &g, |_| true);
        assert_eq!(p, before);
    }

    #[test]
    fn moments_round_trip() {
        let mut p = Linear::<f32>::zeros(3, 2);
        let mut g = p.zeroed();
        g.fill(0.25);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        opt.update(&mut p, &g, |_| false);
        let bytes = opt.to_bytes();
        let mut fresh = AdamW::new(&p, AdamWConfig::default());
        fresh.load_moments(&bytes, Path::new("opt.bin"), 1).unwrap();
        assert_eq!(fresh, opt);
    }
}
