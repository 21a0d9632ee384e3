//! Elementwise activations with explicit backward passes.

use crate::mat::Mat;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// GELU, tanh approximation. Smooth everywhere, so finite-difference checks
/// are well-behaved even near zero pre-activations.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu_mat(x: &Mat) -> Mat {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = gelu(*v);
    }
    out
}

/// dL/dx given the cached pre-activation and upstream gradient.
pub fn gelu_backward_mat(pre: &Mat, dy: &Mat) -> Mat {
    let mut out = dy.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(pre.data()) {
        *g *= gelu_grad(x);
    }
    out
}

/// Gated linear unit over the channel axis: input T×2k, output T×k,
/// out = a ⊙ σ(g) with a the first k channels and g the last k.
pub fn glu_forward(x: &Mat) -> Mat {
    assert!(x.cols() % 2 == 0, "GLU needs an even channel count");
    let half = x.cols() / 2;
    Mat::from_fn(x.rows(), half, |t, c| x.at(t, c) * sigmoid(x.at(t, half + c)))
}

/// Gradient w.r.t. the pre-gate input, given the cached input.
pub fn glu_backward(x: &Mat, dy: &Mat) -> Mat {
    let half = x.cols() / 2;
    assert_eq!(dy.cols(), half);
    let mut dx = Mat::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        for c in 0..half {
            let a = x.at(t, c);
            let s = sigmoid(x.at(t, half + c));
            let g = dy.at(t, c);
            *dx.at_mut(t, c) = g * s;
            *dx.at_mut(t, half + c) = g * a * s * (1.0 - s);
        }
    }
    dx
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward through a row-wise softmax given its output `y`:
/// dx = (dy - rowdot(dy, y)) ⊙ y.
pub fn softmax_backward_rows(y: &Mat, dy: &Mat) -> Mat {
    let mut dx = Mat::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        let dxr = dx.row_mut(r);
        for c in 0..yr.len() {
            dxr[c] = (dyr[c] - inner) * yr[c];
        }
    }
    dx
}

pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - log_sum).collect()
}
