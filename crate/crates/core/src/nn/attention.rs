//! Multi-head scaled dot-product self-attention with manual backward.

use crate::mat::Mat;
use crate::nn::act::{softmax_backward_rows, softmax_rows};
use crate::nn::linear::Linear;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>, // per head, T×T
}

fn col_block(x: &Mat, start: usize, width: usize) -> Mat {
    Mat::from_fn(x.rows(), width, |t, c| x.at(t, start + c))
}

fn add_col_block(dst: &mut Mat, start: usize, block: &Mat) {
    for t in 0..block.rows() {
        for c in 0..block.cols() {
            *dst.at_mut(t, start + c) += block.at(t, c);
        }
    }
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(dim % heads == 0, "model dim must divide evenly into heads");
        MultiHeadAttention {
            dim,
            heads,
            head_dim: dim / heads,
            wq: Linear::new(dim, dim, true, rng),
            wk: Linear::new(dim, dim, true, rng),
            wv: Linear::new(dim, dim, true, rng),
            wo: Linear::new(dim, dim, true, rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Mat) -> Mat {
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let t_len = x.rows();
        let mut ctx = Mat::zeros(t_len, self.dim);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * self.head_dim;
            let qh = col_block(&q, off, self.head_dim);
            let kh = col_block(&k, off, self.head_dim);
            let vh = col_block(&v, off, self.head_dim);
            let mut scores = qh.matmul_nt(&kh);
            scores.scale(scale);
            let p = softmax_rows(&scores);
            let ctx_h = p.matmul(&vh);
            add_col_block(&mut ctx, off, &ctx_h);
            probs.push(p);
        }
        let out = self.wo.forward(&ctx);
        self.cache = Some(Cache { q, k, v, probs });
        out
    }

    pub fn backward(&mut self, dy: &Mat) -> Mat {
        let dctx = self.wo.backward(dy);
        let cache = self.cache.as_ref().expect("attention backward without forward");
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let t_len = dy.rows();
        let mut dq = Mat::zeros(t_len, self.dim);
        let mut dk = Mat::zeros(t_len, self.dim);
        let mut dv = Mat::zeros(t_len, self.dim);
        for h in 0..self.heads {
            let off = h * self.head_dim;
            let qh = col_block(&cache.q, off, self.head_dim);
            let kh = col_block(&cache.k, off, self.head_dim);
            let vh = col_block(&cache.v, off, self.head_dim);
            let p = &cache.probs[h];
            let dctx_h = col_block(&dctx, off, self.head_dim);
            // ctx_h = P·V
            let dp = dctx_h.matmul_nt(&vh);
            let dvh = p.matmul_tn(&dctx_h);
            // scores = scale·Q·Kᵀ
            let mut dscores = softmax_backward_rows(p, &dp);
            dscores.scale(scale);
            let dqh = dscores.matmul(&kh);
            let dkh = dscores.matmul_tn(&qh);
            add_col_block(&mut dq, off, &dqh);
            add_col_block(&mut dk, off, &dkh);
            add_col_block(&mut dv, off, &dvh);
        }
        let mut dx = self.wq.backward(&dq);
        dx.add_assign(&self.wk.backward(&dk));
        dx.add_assign(&self.wv.backward(&dv));
        dx
    }

    /// Attention probabilities from the most recent forward, one T×T matrix
    /// per head.
    pub fn last_probs(&self) -> Option<&[Mat]> {
        self.cache.as_ref().map(|c| c.probs.as_slice())
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.wq.clear_cache();
        self.wk.clear_cache();
        self.wv.clear_cache();
        self.wo.clear_cache();
    }
}

impl Parameterized for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.wq.visit_params(&join(prefix, "wq"), f);
        self.wk.visit_params(&join(prefix, "wk"), f);
        self.wv.visit_params(&join(prefix, "wv"), f);
        self.wo.visit_params(&join(prefix, "wo"), f);
    }
}
