//! Layer normalization over the feature axis.

use crate::mat::Mat;
use crate::nn::param::{join, Param, Parameterized};

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            dim,
            gamma: Param::new(vec![1.0; dim]),
            beta: Param::zeros(dim),
            eps: 1e-5,
            cache: None,
        }
    }

    /// Pre-affine normalization of one matrix; also used by tests to check
    /// the mean-0/var-1 contract.
    pub fn normalize(&self, x: &Mat) -> (Mat, Vec<f64>) {
        assert_eq!(x.cols(), self.dim);
        let d = self.dim as f64;
        let mut out = Mat::zeros(x.rows(), x.cols());
        let mut inv_stds = Vec::with_capacity(x.rows());
        for t in 0..x.rows() {
            let row = x.row(t);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            let out_row = out.row_mut(t);
            for (o, &v) in out_row.iter_mut().zip(row) {
                *o = (v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        (out, inv_stds)
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let (normalized, _) = self.normalize(x);
        let mut y = normalized;
        for t in 0..y.rows() {
            let row = y.row_mut(t);
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma.value[c] + self.beta.value[c];
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Mat) -> Mat {
        let (normalized, inv_std) = self.normalize(x);
        let mut y = normalized.clone();
        for t in 0..y.rows() {
            let row = y.row_mut(t);
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.gamma.value[c] + self.beta.value[c];
            }
        }
        self.cache = Some(Cache {
            normalized,
            inv_std,
        });
        y
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn backward(&mut self, dy: &Mat) -> Mat {
        let cache = self.cache.as_ref().expect("layernorm backward without forward");
        let xn = &cache.normalized;
        let d = self.dim as f64;
        let mut dx = Mat::zeros(dy.rows(), dy.cols());
        for t in 0..dy.rows() {
            let dy_row = dy.row(t);
            let xn_row = xn.row(t);
            // Param grads.
            for c in 0..self.dim {
                self.gamma.grad[c] += dy_row[c] * xn_row[c];
                self.beta.grad[c] += dy_row[c];
            }
            // dxn = dy ⊙ γ; dx = (dxn − mean(dxn) − xn·mean(dxn ⊙ xn)) · inv_std
            let mut mean_dxn = 0.0;
            let mut mean_dxn_xn = 0.0;
            for c in 0..self.dim {
                let dxn = dy_row[c] * self.gamma.value[c];
                mean_dxn += dxn;
                mean_dxn_xn += dxn * xn_row[c];
            }
            mean_dxn /= d;
            mean_dxn_xn /= d;
            let inv_std = cache.inv_std[t];
            let dx_row = dx.row_mut(t);
            for c in 0..self.dim {
                let dxn = dy_row[c] * self.gamma.value[c];
                dx_row[c] = (dxn - mean_dxn - xn_row[c] * mean_dxn_xn) * inv_std;
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_rows_have_zero_mean_unit_var() {
        let ln = LayerNorm::new(16);
        let x = Mat::from_fn(8, 16, |r, c| ((r * 16 + c) as f64 * 0.61).sin() * 3.0 + 1.5);
        let (n, _) = ln.normalize(&x);
        for t in 0..8 {
            let row = n.row(t);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut ln = LayerNorm::new(6);
        // Non-trivial affine params.
        for c in 0..6 {
            ln.gamma.value[c] = 0.5 + 0.2 * c as f64;
            ln.beta.value[c] = -0.3 + 0.1 * c as f64;
        }
        let x = Mat::from_fn(4, 6, |r, c| ((r * 6 + c) as f64 * 0.77).cos() * 1.7);
        // Weighted-sum loss so gradients are non-uniform.
        let w = Mat::from_fn(4, 6, |r, c| ((r + 2 * c) as f64 * 0.13).sin());
        let loss = |ln: &LayerNorm, x: &Mat| -> f64 {
            let y = ln.apply(x);
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        ln.forward(&x);
        let dx = ln.backward(&w);
        let h = 1e-6;
        for t in 0..4 {
            for c in 0..6 {
                let mut xp = x.clone();
                *xp.at_mut(t, c) += h;
                let lp = loss(&ln, &xp);
                *xp.at_mut(t, c) -= 2.0 * h;
                let lm = loss(&ln, &xp);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - dx.at(t, c)).abs() < 1e-6,
                    "({t},{c}): fd {fd} vs {}",
                    dx.at(t, c)
                );
            }
        }
    }
}
