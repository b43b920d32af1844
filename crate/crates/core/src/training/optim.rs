use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 || step >= total {
        return if total == 0 { lr_max } else { lr_min };
    }
    let frac = step as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub hp: AdamWParams,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(hp: AdamWParams) -> Self {
        Self {
            hp,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient entry:
    /// `theta -= lr * l2 * theta + lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64, l2: f64) -> Result<()> {
        self.step += 1;
        let AdamWParams { beta1, beta2, eps } = self.hp;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let theta = params.get(name)?.to_vec();
            if g.len() != theta.len() {
                return Err(Error::Shape(format!("{name}: gradient of {} for {} values", g.len(), theta.len())));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let mut out = Vec::with_capacity(theta.len());
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                out.push(theta[i] - lr * l2 * theta[i] - lr * m_hat / (v_hat.sqrt() + eps));
            }
            params.set_values(name, out)?;
        }
        Ok(())
    }
}
