use super::{Scalar, Tensor};
use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { config, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return usage("adam: parameter/gradient count mismatch");
        }
        self.t += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return usage(format!("adam: shape mismatch for parameter {i}"));
            }
            adam_update(p.data_mut(), g.data(), self.m[i].data_mut(), self.v[i].data_mut(), &self.config, self.t);
        }
        Ok(())
    }
}

/// One in-place Adam update at step `t ≥ 1`.
pub fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &AdamConfig, t: u64) {
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let one = T::one();
    let bc1 = T::from_f64(1.0 - c.beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - c.beta2.powi(t as i32));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}
