use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Float;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, message: &str| {
            Err(Error::Hyper {
                name,
                message: message.into(),
            })
        };
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", "must be finite and non-negative");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(name, "must lie in [0, 1)");
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps", "must be finite and positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be finite and non-negative");
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: HashMap<ParamId, Vec<Float>>,
    second: HashMap<ParamId, Vec<Float>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[Float]> {
        self.first.get(&id).map(Vec::as_slice)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[Float]> {
        self.second.get(&id).map(Vec::as_slice)
    }

    /// Applies one update to `ids`. Gradients are read, never cleared.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(Error::Contract(format!(
                "AdamW step on parameter {:?} which has no gradient buffer",
                store.get(bad).name
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (lr, b1, b2, eps, wd) = (
            c.lr as Float,
            c.beta1 as Float,
            c.beta2 as Float,
            c.eps as Float,
            c.weight_decay as Float,
        );
        let (bc1, bc2) = (bc1 as Float, bc2 as Float);
        for &id in ids {
            let numel = store.value(id).numel();
            let m = self.first.entry(id).or_insert_with(|| vec![0.0; numel]);
            let v = self.second.entry(id).or_insert_with(|| vec![0.0; numel]);
            let (value, grad) = store.value_and_grad_mut(id);
            let grad = grad.expect("checked above").data();
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * wd * *w;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
