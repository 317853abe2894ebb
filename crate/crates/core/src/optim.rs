//! AdamW with decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::mathutil;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamWConfig {
    /// Defaults mirror the training recipe this crate targets. beta1 = 0.99
    /// is unusually high but intentional.
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 1e-4,
            epsilon: 1e-8,
            beta1: 0.99,
            beta2: 0.999,
        }
    }
}

/// Per-parameter first/second moment state.
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        AdamW {
            config,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            t: 0,
        }
    }

    /// One update over parallel slices of parameters and gradients.
    /// Parameters with a `None` gradient are skipped entirely (their moments
    /// stay untouched).
    pub fn step(&mut self, lr: f64, params: &mut [&mut Mat], grads: &[Option<&Mat>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - mathutil::powf(c.beta1, self.t as f64);
        let bc2 = 1.0 - mathutil::powf(c.beta2, self.t as f64);
        for i in 0..params.len() {
            let Some(g) = grads[i] else { continue };
            let p = &mut *params[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for idx in 0..p.data().len() {
                let gi = g.data()[idx];
                m.data_mut()[idx] = c.beta1 * m.data()[idx] + (1.0 - c.beta1) * gi;
                v.data_mut()[idx] = c.beta2 * v.data()[idx] + (1.0 - c.beta2) * gi * gi;
                let mhat = m.data()[idx] / bc1;
                let vhat = v.data()[idx] / bc2;
                let update = mhat / (mathutil::sqrt(vhat) + c.epsilon);
                let decayed = lr * c.weight_decay * p.data()[idx];
                p.data_mut()[idx] -= lr * update + decayed;
            }
        }
    }
}
