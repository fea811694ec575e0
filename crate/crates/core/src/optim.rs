//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-5, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("optimizer: invalid settings {self:?}")));
        }
        Ok(())
    }
}

pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Returns updated parameter values. Parameters without a gradient are
    /// treated as having a zero gradient (weight decay still applies).
    pub fn step(&mut self, params: &[Tensor], grads: &[Option<Vec<f64>>]) -> Result<Vec<Tensor>> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Dimension("optimizer state does not match parameter list".into()));
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(params.len());
        for (k, p) in params.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut data = p.data().to_vec();
            let g = grads[k].as_deref();
            for i in 0..data.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                data[i] -= c.lr * (update + c.weight_decay * data[i]);
            }
            out.push(Tensor::param(data, p.shape())?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..AdamWConfig::default() };
        let p = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
        let mut opt = AdamW::new(cfg, &[p.clone()]).unwrap();
        let out = opt.step(&[p], &[Some(vec![3.0, -0.5])]).unwrap();
        assert!((out[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((out[0].data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut p = Tensor::param(vec![3.0], &[1]).unwrap();
        let mut opt = AdamW::new(cfg, &[p.clone()]).unwrap();
        for _ in 0..500 {
            let loss = p.mul(&p).unwrap().sum().unwrap();
            loss.backward().unwrap();
            let g = p.grad();
            p = opt.step(&[p], &[g]).unwrap().remove(0);
        }
        assert!(p.data()[0].abs() < 0.05);
    }

    #[test]
    fn decay_without_gradient() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..AdamWConfig::default() };
        let p = Tensor::param(vec![2.0], &[1]).unwrap();
        let mut opt = AdamW::new(cfg, &[p.clone()]).unwrap();
        let out = opt.step(&[p], &[None]).unwrap();
        assert!((out[0].data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}
