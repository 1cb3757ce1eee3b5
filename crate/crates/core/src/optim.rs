//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{PadError, Result};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `ids`. Each must be trainable.
    ///
    /// Parameters flagged `decay = false` skip the decoupled decay term.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if store.get(id).grad.is_none() {
                return Err(PadError::Optimizer(format!(
                    "parameter {} has no gradient (frozen?)",
                    store.get(id).name
                )));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for &id in ids {
            let p = store.get_mut(id);
            let n = p.value.numel();
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = p.grad.as_ref().expect("checked above");
            let shrink = if p.decay { 1.0 - lr * weight_decay } else { 1.0 };
            let values = p.value.data_mut();
            for k in 0..n {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                values[k] = values[k] * shrink - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
