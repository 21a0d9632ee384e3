//! Bias-corrected Adam over named parameters, with per-name freeze gating.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::param::Parameterized;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step_count: u64,
    pub moments: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    /// One update over every non-frozen parameter. Rejects the whole step if
    /// any gradient (frozen ones included) is non-finite, leaving parameters
    /// and moments untouched.
    pub fn step(
        &mut self,
        model: &mut dyn Parameterized,
        lr: f64,
        frozen: &dyn Fn(&str) -> bool,
    ) -> Result<()> {
        let mut bad: Option<String> = None;
        model.visit_params("", &mut |name, p| {
            if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }
        self.step_count += 1;
        let t = self.step_count;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let moments = &mut self.moments;
        model.visit_params("", &mut |name, p| {
            if frozen(name) {
                return;
            }
            let entry = moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.len() {
                let g = p.grad[i];
                entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * g;
                entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * g * g;
                let m_hat = entry.m[i] / bc1;
                let v_hat = entry.v[i] / bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}
