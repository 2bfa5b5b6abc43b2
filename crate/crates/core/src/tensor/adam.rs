use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are allocated on the first step and
/// their shapes are checked against the parameters on every later one.
#[derive(Clone, Debug)]
pub struct AdamState<R> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<R>>,
    second: Vec<Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(param, grad)` pair, in a fixed order
    /// that must stay the same across calls. A missing gradient counts as
    /// zero.
    pub fn step<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a mut Tensor<R>, Option<&'a Tensor<R>>)>) -> Result<()> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        if self.step == 0 {
            self.first = pairs.iter().map(|(p, _)| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if pairs.len() != self.first.len() {
            return Err(Error::shape("adam_step", format!("{} parameters, state has {}", pairs.len(), self.first.len())));
        }
        for (i, (p, g)) in pairs.iter().enumerate() {
            if p.shape() != self.first[i].shape() || g.is_some_and(|g| g.shape() != p.shape()) {
                return Err(Error::shape("adam_step", format!("parameter {i} changed shape")));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let bc1 = R::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = R::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (R::of(c.lr), R::of(c.eps));
        for (i, (p, g)) in pairs.into_iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = p.data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(R::zero(), |g| g.data()[j]);
                m[j] = b1 * m[j] + (R::one() - b1) * gj;
                v[j] = b2 * v[j] + (R::one() - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
