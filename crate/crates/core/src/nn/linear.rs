//! Fully connected layer with cached-input backward.

use crate::mat::Mat;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

/// y = x·W (+ b). Weight layout is in_dim×out_dim so a time-major input
/// multiplies without transposition.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Mat>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: Param::uniform_fan_in(in_dim * out_dim, in_dim, rng),
            bias: bias.then(|| Param::zeros(out_dim)),
            cache: None,
        }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        assert_eq!(x.cols(), self.in_dim);
        let mut y = Mat::zeros(x.rows(), self.out_dim);
        for t in 0..x.rows() {
            let x_row = x.row(t);
            let y_row = y.row_mut(t);
            if let Some(b) = &self.bias {
                y_row.copy_from_slice(&b.value);
            }
            for (i, &xi) in x_row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w_row = &self.weight.value[i * self.out_dim..(i + 1) * self.out_dim];
                for (o, &w) in y_row.iter_mut().zip(w_row) {
                    *o += xi * w;
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Mat) -> Mat {
        let y = self.apply(x);
        self.cache = Some(x.clone());
        y
    }

    /// Accumulates weight/bias gradients and returns dL/dx.
    pub fn backward(&mut self, dy: &Mat) -> Mat {
        let x = self.cache.as_ref().expect("linear backward without forward");
        assert_eq!(dy.rows(), x.rows());
        assert_eq!(dy.cols(), self.out_dim);
        // dW[i,o] += sum_t x[t,i]·dy[t,o]
        for t in 0..x.rows() {
            let x_row = x.row(t);
            let dy_row = dy.row(t);
            for (i, &xi) in x_row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let gw = &mut self.weight.grad[i * self.out_dim..(i + 1) * self.out_dim];
                for (g, &d) in gw.iter_mut().zip(dy_row) {
                    *g += xi * d;
                }
            }
            if let Some(b) = &mut self.bias {
                for (g, &d) in b.grad.iter_mut().zip(dy_row) {
                    *g += d;
                }
            }
        }
        // dx[t,i] = sum_o dy[t,o]·W[i,o]
        let mut dx = Mat::zeros(x.rows(), self.in_dim);
        for t in 0..x.rows() {
            let dy_row = dy.row(t);
            let dx_row = dx.row_mut(t);
            for (i, d) in dx_row.iter_mut().enumerate() {
                let w_row = &self.weight.value[i * self.out_dim..(i + 1) * self.out_dim];
                let mut acc = 0.0;
                for (w, dv) in w_row.iter().zip(dy_row) {
                    acc += w * dv;
                }
                *d = acc;
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param;

    #[test]
    fn forward_matches_manual() {
        let mut rng = Rng::seed_from(1);
        let mut lin = Linear::new(3, 2, true, &mut rng);
        lin.weight.value = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        lin.bias.as_mut().unwrap().value = vec![0.5, -0.5];
        let x = Mat::from_vec(1, 3, vec![1.0, 0.0, 2.0]);
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[1.0 + 10.0 + 0.5, 2.0 + 12.0 - 0.5]);
    }

    #[test]
    fn backward_gradients_match_finite_difference() {
        let mut rng = Rng::seed_from(9);
        let mut lin = Linear::new(4, 3, true, &mut rng);
        let x = Mat::from_fn(5, 4, |r, c| ((r * 4 + c) as f64 * 0.37).sin());
        // loss = sum of outputs
        let y = lin.forward(&x);
        let dy = Mat::from_fn(y.rows(), y.cols(), |_, _| 1.0);
        let dx = lin.backward(&dy);

        let loss = |l: &Linear, x: &Mat| -> f64 { l.apply(x).data().iter().sum() };
        let h = 1e-6;
        for name in param::param_names(&mut lin) {
            let base = param::get_param(&mut lin, &name).unwrap();
            let grad = param::get_grad(&mut lin, &name).unwrap();
            for i in 0..base.len() {
                let mut up = base.clone();
                up[i] += h;
                param::set_param(&mut lin, &name, &up);
                let lp = loss(&lin, &x);
                up[i] -= 2.0 * h;
                param::set_param(&mut lin, &name, &up);
                let lm = loss(&lin, &x);
                param::set_param(&mut lin, &name, &base);
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{} [{}]: {} vs {}", name, i, fd, grad[i]);
            }
        }
        // input gradient: d(sum y)/dx[t,i] = sum_o W[i,o]
        for t in 0..x.rows() {
            for i in 0..4 {
                let expect: f64 = lin.weight.value[i * 3..(i + 1) * 3].iter().sum();
                assert!((dx.at(t, i) - expect).abs() < 1e-12);
            }
        }
    }
}
