use serde::{Deserialize, Serialize};

use crate::params::EntryKind;
use crate::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, clip_norm: None }
    }
}

/// Decoupled-weight-decay Adam bound to one [`ParamSet`] layout.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(set: &ParamSet, config: AdamWConfig) -> Self {
        let m: Vec<Tensor> = set.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self { config, step: 0, v: m.clone(), m }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Entries without a gradient are left untouched.
    pub fn step(&mut self, set: &mut ParamSet, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), set.len(), "gradient list does not match parameter set");
        self.step += 1;
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm: f64 = grads
                    .iter()
                    .flatten()
                    .flat_map(|g| g.data().iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max { max / (norm + 1e-12) } else { 1.0 }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            if set.kind(crate::ParamId(i)) != EntryKind::Param {
                continue;
            }
            let p = set.get_mut(crate::ParamId(i)).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = grad.data()[j] * clip;
                p[j] -= c.lr * c.weight_decay * p[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn minimises_a_quadratic() {
        let mut set = ParamSet::new();
        let id = set.add_param("x", Tensor::full(&[3], 5.0));
        let mut cfg = AdamWConfig::with_lr(0.1);
        cfg.weight_decay = 0.0;
        let mut opt = AdamW::new(&set, cfg);
        for _ in 0..500 {
            let mut g = Graph::eval();
            let x = g.param(&set, id);
            let sq = g.square(x);
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap().for_set(&set);
            opt.step(&mut set, &grads);
        }
        assert!(set.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut set = ParamSet::new();
        let id = set.add_param("x", Tensor::full(&[1], 1.0));
        let mut cfg = AdamWConfig::with_lr(0.01);
        cfg.weight_decay = 0.0;
        let mut opt = AdamW::new(&set, cfg);
        opt.step(&mut set, &[Some(Tensor::full(&[1], 3.0))]);
        assert!((set.get(id).item() - 0.99).abs() < 1e-9);
    }
}
