//! Adam optimizer over named parameter tensors, plus global-norm clipping.

use std::collections::BTreeMap;

use crate::autodiff::ParamTensor;
use crate::error::{Error, Result};

/// Adam state: step count, hyperparameters, and first/second moment
/// estimates keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one Adam update (with bias correction) to every parameter
    /// that has a gradient. Parameters without a gradient are left alone.
    pub fn update(
        &mut self,
        params: &mut BTreeMap<String, ParamTensor>,
        grads: &BTreeMap<String, Vec<f64>>,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let param = params.get_mut(name).ok_or_else(|| {
                Error::Shape(format!("gradient for unknown parameter `{name}`"))
            })?;
            if grad.len() != param.values.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} entries, parameter has {}",
                    grad.len(),
                    param.values.len()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients in place so their joint L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.values() {
        for x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}
