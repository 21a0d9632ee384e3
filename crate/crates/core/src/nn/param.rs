//! Learnable parameter storage and the visitor used by the optimizer,
//! checkpointing, freeze gating, and finite-difference tests.

use crate::rng::Rng;

/// A flat learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zeros(len: usize) -> Self {
        Param::new(vec![0.0; len])
    }

    /// Kaiming-style uniform init with fan-in scaling: U(-b, b), b = sqrt(1/fan_in).
    pub fn uniform_fan_in(len: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        Param::new((0..len).map(|_| rng.uniform(-bound, bound)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = 0.0;
        }
    }
}

/// Anything holding named parameters. Names are dot-joined paths, stable
/// across runs, so optimizer state and checkpoints key off them.
pub trait Parameterized {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_names(model: &mut dyn Parameterized) -> Vec<String> {
    let mut names = Vec::new();
    model.visit_params("", &mut |name, _| names.push(name.to_string()));
    names
}

pub fn num_params(model: &mut dyn Parameterized) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, p| n += p.len());
    n
}

pub fn zero_grads(model: &mut dyn Parameterized) {
    model.visit_params("", &mut |_, p| p.zero_grad());
}

pub fn get_param(model: &mut dyn Parameterized, name: &str) -> Option<Vec<f64>> {
    let mut out = None;
    model.visit_params("", &mut |n, p| {
        if n == name {
            out = Some(p.value.clone());
        }
    });
    out
}

pub fn set_param(model: &mut dyn Parameterized, name: &str, values: &[f64]) -> bool {
    let mut found = false;
    model.visit_params("", &mut |n, p| {
        if n == name {
            assert_eq!(p.value.len(), values.len());
            p.value.copy_from_slice(values);
            found = true;
        }
    });
    found
}

pub fn get_grad(model: &mut dyn Parameterized, name: &str) -> Option<Vec<f64>> {
    let mut out = None;
    model.visit_params("", &mut |n, p| {
        if n == name {
            out = Some(p.grad.clone());
        }
    });
    out
}

/// FNV-1a over the little-endian bytes of parameter values whose name passes
/// the filter. Bit-exact, so it detects any drift during a freeze window.
pub fn fingerprint(model: &mut dyn Parameterized, filter: impl Fn(&str) -> bool) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    model.visit_params("", &mut |name, p| {
        if !filter(name) {
            return;
        }
        for v in &p.value {
            for b in v.to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        }
    });
    hash
}
