//! Strided 1-d convolution over time-major sequences.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

/// Valid (no padding) strided convolution: input T×in_ch, output T'×out_ch
/// with T' = floor((T − kernel)/stride) + 1.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Layout: weight[o][i][k] flattened as o·(in_ch·kernel) + i·kernel + k.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Mat>,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = in_ch * kernel;
        Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: Param::uniform_fan_in(out_ch * in_ch * kernel, fan_in, rng),
            bias: Param::zeros(out_ch),
            cache: None,
        }
    }

    pub fn out_len(&self, t_in: usize) -> Option<usize> {
        if t_in < self.kernel {
            None
        } else {
            Some((t_in - self.kernel) / self.stride + 1)
        }
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        assert_eq!(x.cols(), self.in_ch);
        let t_out = self.out_len(x.rows()).ok_or(Error::InputTooShort)?;
        let kw = self.in_ch * self.kernel;
        let mut y = Mat::zeros(t_out, self.out_ch);
        for t in 0..t_out {
            let start = t * self.stride;
            let y_row = y.row_mut(t);
            for (o, out) in y_row.iter_mut().enumerate() {
                let w = &self.weight.value[o * kw..(o + 1) * kw];
                let mut acc = self.bias.value[o];
                for k in 0..self.kernel {
                    let x_row = x.row(start + k);
                    for i in 0..self.in_ch {
                        acc += w[i * self.kernel + k] * x_row[i];
                    }
                }
                *out = acc;
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Mat) -> Result<Mat> {
        let y = self.apply(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients; returns dL/dx.
    pub fn backward(&mut self, dy: &Mat) -> Result<Mat> {
        let x = self.cache.as_ref().ok_or(Error::NoForwardPass)?;
        let t_out = dy.rows();
        assert_eq!(dy.cols(), self.out_ch);
        let kw = self.in_ch * self.kernel;
        let mut dx = Mat::zeros(x.rows(), x.cols());
        for t in 0..t_out {
            let start = t * self.stride;
            let dy_row = dy.row(t);
            for (o, &d) in dy_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                self.bias.grad[o] += d;
                let w = &self.weight.value[o * kw..(o + 1) * kw];
                let gw = &mut self.weight.grad[o * kw..(o + 1) * kw];
                for k in 0..self.kernel {
                    let x_row = x.row(start + k);
                    let dx_row = dx.row_mut(start + k);
                    for i in 0..self.in_ch {
                        gw[i * self.kernel + k] += d * x_row[i];
                        dx_row[i] += d * w[i * self.kernel + k];
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameterized for Conv1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_formula() {
        let mut rng = Rng::seed_from(2);
        let c = Conv1d::new(1, 1, 10, 5, &mut rng);
        assert_eq!(c.out_len(16000), Some(3199));
        assert_eq!(c.out_len(10), Some(1));
        assert_eq!(c.out_len(9), None);
    }

    #[test]
    fn one_by_one_conv_weight_gradient_is_input_sum() {
        // 1x1 conv, stride 1, loss = sum of outputs -> dW = sum of inputs.
        let mut rng = Rng::seed_from(3);
        let mut c = Conv1d::new(1, 1, 1, 1, &mut rng);
        let x = Mat::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let y = c.forward(&x).unwrap();
        assert_eq!(y.rows(), 4);
        let dy = Mat::from_fn(4, 1, |_, _| 1.0);
        c.backward(&dy).unwrap();
        assert!((c.weight.grad[0] - 10.0).abs() < 1e-12);
        assert!((c.bias.grad[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut rng = Rng::seed_from(4);
        let mut c = Conv1d::new(2, 2, 2, 1, &mut rng);
        let dy = Mat::zeros(1, 2);
        assert!(matches!(c.backward(&dy), Err(Error::NoForwardPass)));
    }

    #[test]
    fn too_short_input_errors() {
        let mut rng = Rng::seed_from(5);
        let mut c = Conv1d::new(1, 1, 8, 4, &mut rng);
        let x = Mat::zeros(5, 1);
        assert!(matches!(c.forward(&x), Err(Error::InputTooShort)));
    }
}
