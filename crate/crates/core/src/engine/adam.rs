use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::ParamSet;
use crate::error::{Error, Result};

/// Adam optimizer state: per-parameter first/second moments plus the step
/// counter. Moments are keyed by parameter name and allocated lazily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update. Every trainable parameter must carry a
    /// gradient; frozen parameters are skipped entirely.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, p) in params.iter() {
            if p.trainable && p.value.grad().is_none() {
                return Err(Error::NotReady(name.to_string()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let n = p.value.numel();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n || v.len() != n {
                return Err(Error::dim("adam_step", n, m.len()));
            }
            let g = p.value.grad().expect("checked above").to_vec();
            let vals = p.value.values_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                vals[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
