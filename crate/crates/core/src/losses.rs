//! Masked-prediction objectives: the cosine-similarity codebook loss and the
//! simplified softmax cross-entropy loss, plus intermediate-layer (ILS)
//! aggregation and masked-prediction accuracy.
//!
//! Both losses are restricted to masked frames; unmasked frames never enter
//! the computation.

use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::labels::LabelSequence;
use crate::mat::Mat;
use crate::masking::MaskPlan;
use crate::nn::act::log_softmax_row;
use crate::nn::linear::Linear;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Norms are clamped here before dividing in the cosine path.
const NORM_CLAMP: f64 = 1e-8;

/// Sum/count form of a masked loss, so gradient accumulation across
/// micro-batches can weight frames exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub sum: f64,
    pub count: usize,
    pub correct: usize,
}

impl LossValue {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        if self.count == 0 {
            None
        } else {
            Some(self.correct as f64 / self.count as f64)
        }
    }
}

/// Per-step scalar report: total masked loss, per-tap contributions when ILS
/// is active, and masked-prediction accuracy of the top head.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub masked_frames: usize,
    /// (1-based tap layer, mean tap loss); empty without ILS.
    pub per_tap: Vec<(usize, f64)>,
    pub accuracy: Option<f64>,
}

fn check_aligned(o: &Mat, plan: &MaskPlan, labels: &LabelSequence) -> Result<Vec<usize>> {
    if plan.len() != o.rows() {
        return Err(Error::MaskPlanLength {
            plan: plan.len(),
            seq: o.rows(),
        });
    }
    if labels.len() != o.rows() {
        return Err(Error::LengthMismatch {
            diff: labels.len().abs_diff(o.rows()),
        });
    }
    let idx = plan.masked_indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(idx)
}

fn gather_rows(o: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), o.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(o.row(i));
    }
    out
}

fn scatter_rows(rows: &Mat, idx: &[usize], t_len: usize) -> Mat {
    let mut out = Mat::zeros(t_len, rows.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(i).copy_from_slice(rows.row(r));
    }
    out
}

/// Learnable per-class embeddings for the codebook loss.
#[derive(Debug, Clone)]
pub struct CodebookEmbeddings {
    pub embeddings: Param, // C×K flattened
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl CodebookEmbeddings {
    pub fn new(num_classes: usize, embed_dim: usize, rng: &mut Rng) -> Self {
        CodebookEmbeddings {
            embeddings: Param::uniform_fan_in(num_classes * embed_dim, embed_dim, rng),
            num_classes,
            embed_dim,
        }
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.embeddings.value[c * self.embed_dim..(c + 1) * self.embed_dim]
    }
}

#[derive(Debug, Clone)]
struct CodebookLossCache {
    masked_idx: Vec<usize>,
    t_len: usize,
    u: Mat,            // T_m × K projected vectors
    u_norms: Vec<f64>, // clamped
    e_hat: Mat,        // C × K normalized codebook
    e_norms: Vec<f64>, // clamped
    cos: Mat,          // T_m × C
    probs: Mat,        // T_m × C
    labels: Vec<u32>,
}

/// Codebook loss head: logits are temperature-scaled cosine similarities
/// between projected hidden states and per-class embeddings.
#[derive(Debug, Clone)]
pub struct CodebookHead {
    pub proj: Linear, // model_dim → K, no bias
    pub codebook: CodebookEmbeddings,
    pub temperature: f64,
    cache: Option<CodebookLossCache>,
}

impl CodebookHead {
    pub fn new(
        model_dim: usize,
        embed_dim: usize,
        num_classes: usize,
        temperature: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        CodebookHead {
            proj: Linear::new(model_dim, embed_dim, false, rng),
            codebook: CodebookEmbeddings::new(num_classes, embed_dim, rng),
            temperature,
            cache: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.codebook.num_classes
    }

    /// Mean negative log-probability of the target class over masked frames.
    pub fn forward(&mut self, o: &Mat, plan: &MaskPlan, labels: &LabelSequence) -> Result<LossValue> {
        let masked_idx = check_aligned(o, plan, labels)?;
        let (c_num, k) = (self.codebook.num_classes, self.codebook.embed_dim);
        let o_m = gather_rows(o, &masked_idx);
        let u = self.proj.forward(&o_m);
        let u_norms: Vec<f64> = (0..u.rows())
            .map(|i| crate::mat::l2_norm(u.row(i)).max(NORM_CLAMP))
            .collect();
        let mut e_hat = Mat::zeros(c_num, k);
        let mut e_norms = Vec::with_capacity(c_num);
        for c in 0..c_num {
            let row = self.codebook.row(c);
            let n = crate::mat::l2_norm(row).max(NORM_CLAMP);
            for (dst, &v) in e_hat.row_mut(c).iter_mut().zip(row) {
                *dst = v / n;
            }
            e_norms.push(n);
        }
        // cos[i][c] = û_i · ê_c
        let mut cos = u.matmul_nt(&e_hat);
        for (i, &n) in u_norms.iter().enumerate() {
            for v in cos.row_mut(i) {
                *v /= n;
            }
        }
        let mut probs = Mat::zeros(cos.rows(), c_num);
        let mut sum = 0.0;
        let mut correct = 0;
        for i in 0..cos.rows() {
            let logits: Vec<f64> = cos.row(i).iter().map(|&c| c / self.temperature).collect();
            let logp = log_softmax_row(&logits);
            let label = labels.ids[masked_idx[i]] as usize;
            if label >= c_num {
                return Err(Error::PhonemeIdOutOfRange {
                    id: label as i64,
                    num_classes: c_num,
                });
            }
            sum -= logp[label];
            let argmax = (0..c_num).fold(0, |b, c| if logits[c] > logits[b] { c } else { b });
            if argmax == label {
                correct += 1;
            }
            for (dst, &lp) in probs.row_mut(i).iter_mut().zip(&logp) {
                *dst = lp.exp();
            }
        }
        let count = masked_idx.len();
        let labels_m = masked_idx.iter().map(|&i| labels.ids[i]).collect();
        self.cache = Some(CodebookLossCache {
            masked_idx,
            t_len: o.rows(),
            u,
            u_norms,
            e_hat,
            e_norms,
            cos,
            probs,
            labels: labels_m,
        });
        Ok(LossValue {
            sum,
            count,
            correct,
        })
    }

    /// Gradient of `scale · loss_sum` w.r.t. the hidden states; codebook and
    /// projection gradients accumulate internally.
    pub fn backward(&mut self, scale: f64) -> Result<Mat> {
        let cache = self.cache.take().ok_or(Error::NoForwardPass)?;
        let (c_num, k) = (self.codebook.num_classes, self.codebook.embed_dim);
        let t_m = cache.u.rows();
        let mut du = Mat::zeros(t_m, k);
        let inv_tau = 1.0 / self.temperature;
        for i in 0..t_m {
            let u_row = cache.u.row(i);
            let u_norm = cache.u_norms[i];
            let u_hat: Vec<f64> = u_row.iter().map(|&v| v / u_norm).collect();
            let label = cache.labels[i] as usize;
            let du_row = du.row_mut(i);
            for c in 0..c_num {
                let mut dcos = cache.probs.at(i, c) * scale * inv_tau;
                if c == label {
                    dcos -= scale * inv_tau;
                }
                if dcos == 0.0 {
                    continue;
                }
                let cos_ic = cache.cos.at(i, c);
                let e_hat_row = cache.e_hat.row(c);
                // d cos / du = (ê_c − cos·û)/‖u‖
                for ((d, &e), &uh) in du_row.iter_mut().zip(e_hat_row).zip(&u_hat) {
                    *d += dcos * (e - cos_ic * uh) / u_norm;
                }
                // d cos / de_c = (û − cos·ê_c)/‖e_c‖
                let e_norm = cache.e_norms[c];
                let ge = &mut self.codebook.embeddings.grad[c * k..(c + 1) * k];
                for ((g, &uh), &e) in ge.iter_mut().zip(&u_hat).zip(e_hat_row) {
                    *g += dcos * (uh - cos_ic * e) / e_norm;
                }
            }
        }
        let d_o_m = self.proj.backward(&du);
        Ok(scatter_rows(&d_o_m, &cache.masked_idx, cache.t_len))
    }
}

impl Parameterized for CodebookHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
        f(&join(prefix, "codebook"), &mut self.codebook.embeddings);
    }
}

#[derive(Debug, Clone)]
struct CeCache {
    masked_idx: Vec<usize>,
    t_len: usize,
    probs: Mat,
    labels: Vec<u32>,
}

/// Simplified cross-entropy head: logits are the linear projection of the
/// hidden state scaled by the temperature.
#[derive(Debug, Clone)]
pub struct CeHead {
    pub proj: Linear, // model_dim → C, no bias
    pub num_classes: usize,
    pub temperature: f64,
    cache: Option<CeCache>,
}

impl CeHead {
    pub fn new(model_dim: usize, num_classes: usize, temperature: f64, rng: &mut Rng) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        CeHead {
            proj: Linear::new(model_dim, num_classes, false, rng),
            num_classes,
            temperature,
            cache: None,
        }
    }

    pub fn forward(&mut self, o: &Mat, plan: &MaskPlan, labels: &LabelSequence) -> Result<LossValue> {
        let masked_idx = check_aligned(o, plan, labels)?;
        let o_m = gather_rows(o, &masked_idx);
        let z = self.proj.forward(&o_m);
        let inv_tau = 1.0 / self.temperature;
        let mut probs = Mat::zeros(z.rows(), self.num_classes);
        let mut sum = 0.0;
        let mut correct = 0;
        for i in 0..z.rows() {
            let logits: Vec<f64> = z.row(i).iter().map(|&v| v * inv_tau).collect();
            let logp = log_softmax_row(&logits);
            let label = labels.ids[masked_idx[i]] as usize;
            if label >= self.num_classes {
                return Err(Error::PhonemeIdOutOfRange {
                    id: label as i64,
                    num_classes: self.num_classes,
                });
            }
            sum -= logp[label];
            let argmax = (0..self.num_classes).fold(0, |b, c| if logits[c] > logits[b] { c } else { b });
            if argmax == label {
                correct += 1;
            }
            for (dst, &lp) in probs.row_mut(i).iter_mut().zip(&logp) {
                *dst = lp.exp();
            }
        }
        let count = masked_idx.len();
        let labels_m = masked_idx.iter().map(|&i| labels.ids[i]).collect();
        self.cache = Some(CeCache {
            masked_idx,
            t_len: o.rows(),
            probs,
            labels: labels_m,
        });
        Ok(LossValue {
            sum,
            count,
            correct,
        })
    }

    /// Gradient of `scale · loss_sum` w.r.t. the hidden states; the classic
    /// softmax − onehot form lands on the logits.
    pub fn backward(&mut self, scale: f64) -> Result<Mat> {
        let cache = self.cache.take().ok_or(Error::NoForwardPass)?;
        let t_m = cache.probs.rows();
        let mut dz = cache.probs.clone();
        let s = scale / self.temperature;
        for i in 0..t_m {
            let label = cache.labels[i] as usize;
            *dz.at_mut(i, label) -= 1.0;
            for v in dz.row_mut(i) {
                *v *= s;
            }
        }
        let d_o_m = self.proj.backward(&dz);
        Ok(scatter_rows(&d_o_m, &cache.masked_idx, cache.t_len))
    }
}

impl Parameterized for CeHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

/// Either pretraining head behind one interface.
#[derive(Debug, Clone)]
pub enum LossHead {
    Codebook(CodebookHead),
    Ce(CeHead),
}

impl LossHead {
    pub fn forward(&mut self, o: &Mat, plan: &MaskPlan, labels: &LabelSequence) -> Result<LossValue> {
        match self {
            LossHead::Codebook(h) => h.forward(o, plan, labels),
            LossHead::Ce(h) => h.forward(o, plan, labels),
        }
    }

    pub fn backward(&mut self, scale: f64) -> Result<Mat> {
        match self {
            LossHead::Codebook(h) => h.backward(scale),
            LossHead::Ce(h) => h.backward(scale),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            LossHead::Codebook(h) => h.num_classes(),
            LossHead::Ce(h) => h.num_classes,
        }
    }
}

impl Parameterized for LossHead {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            LossHead::Codebook(h) => h.visit_params(prefix, f),
            LossHead::Ce(h) => h.visit_params(prefix, f),
        }
    }
}

/// Top-layer head plus independent heads for each ILS tap. The total loss is
/// the unweighted sum of the top loss and every tap loss.
#[derive(Debug, Clone)]
pub struct PretrainObjective {
    pub top: LossHead,
    pub taps: Vec<(usize, LossHead)>,
}

/// Loss and per-layer gradients produced by one objective evaluation.
#[derive(Debug)]
pub struct ObjectiveOutcome {
    pub report: LossReport,
    pub top_value: LossValue,
    pub tap_values: Vec<(usize, LossValue)>,
}

impl PretrainObjective {
    pub fn forward(
        &mut self,
        outputs: &EncoderOutput,
        plan: &MaskPlan,
        labels: &LabelSequence,
    ) -> Result<ObjectiveOutcome> {
        let top_value = self.top.forward(&outputs.top, plan, labels)?;
        let mut tap_values = Vec::new();
        let mut per_tap = Vec::new();
        for (layer, head) in &mut self.taps {
            let hidden = outputs
                .taps
                .iter()
                .find(|(l, _)| l == layer)
                .map(|(_, h)| h)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("no encoder tap for ILS head at layer {layer}"))
                })?;
            let v = head.forward(hidden, plan, labels)?;
            per_tap.push((*layer, v.mean()));
            tap_values.push((*layer, v));
        }
        let total_mean =
            top_value.mean() + tap_values.iter().map(|(_, v)| v.mean()).sum::<f64>();
        let report = LossReport {
            loss: total_mean,
            masked_frames: top_value.count,
            per_tap,
            accuracy: top_value.accuracy(),
        };
        Ok(ObjectiveOutcome {
            report,
            top_value,
            tap_values,
        })
    }

    /// Backward with a shared frame-count scale: gradients of
    /// `Σ_head loss_sum(head) · scale`. Returns (d_top, per-tap gradients).
    pub fn backward(&mut self, scale: f64) -> Result<(Mat, Vec<(usize, Mat)>)> {
        let d_top = self.top.backward(scale)?;
        let mut d_taps = Vec::new();
        for (layer, head) in &mut self.taps {
            d_taps.push((*layer, head.backward(scale)?));
        }
        Ok((d_top, d_taps))
    }
}

impl Parameterized for PretrainObjective {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.top.visit_params(&join(prefix, "top"), f);
        for (layer, head) in &mut self.taps {
            head.visit_params(&join(prefix, &format!("tap{layer}")), f);
        }
    }
}

/// Fraction of masked frames whose argmax logit matches the label, given
/// full-length logits. Returns None when the plan masks nothing.
pub fn masked_accuracy(logits: &Mat, plan: &MaskPlan, labels: &LabelSequence) -> Option<f64> {
    let idx = plan.masked_indices();
    if idx.is_empty() {
        return None;
    }
    let mut correct = 0;
    for &i in &idx {
        let row = logits.row(i);
        let argmax = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if argmax == labels.ids[i] as usize {
            correct += 1;
        }
    }
    Some(correct as f64 / idx.len() as f64)
}
