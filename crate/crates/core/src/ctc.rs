//! CTC: length-feasibility guard, log-space forward-backward loss with logit
//! gradients, and greedy/prefix-beam decoding.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::act::log_softmax_row;
use crate::tokenizer::BLANK_ID;

/// Frames required for a target to be CTC-feasible: one frame per token plus
/// an interposed blank frame between each adjacent repeat.
pub fn required_frames(target: &[u32]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

/// The length-assumption guard: Ok when `t_frames` can carry the target.
pub fn length_guard(t_frames: usize, target: &[u32]) -> Result<()> {
    let required = required_frames(target);
    if t_frames < required {
        Err(Error::CtcGuard {
            frames: t_frames,
            required,
        })
    } else {
        Ok(())
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn extended_labels(target: &[u32]) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK_ID);
    for &t in target {
        ext.push(t);
        ext.push(BLANK_ID);
    }
    ext
}

fn log_probs(logits: &Mat) -> Mat {
    let mut out = Mat::zeros(logits.rows(), logits.cols());
    for t in 0..logits.rows() {
        let lp = log_softmax_row(logits.row(t));
        out.row_mut(t).copy_from_slice(&lp);
    }
    out
}

fn alpha_pass(logp: &Mat, ext: &[u32]) -> Mat {
    let (t_len, s_len) = (logp.rows(), ext.len());
    let mut alpha = Mat::from_fn(t_len, s_len, |_, _| f64::NEG_INFINITY);
    *alpha.at_mut(0, 0) = logp.at(0, ext[0] as usize);
    if s_len > 1 {
        *alpha.at_mut(0, 1) = logp.at(0, ext[1] as usize);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha.at(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.at(t - 1, s - 1));
            }
            if s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha.at(t - 1, s - 2));
            }
            *alpha.at_mut(t, s) = acc + logp.at(t, ext[s] as usize);
        }
    }
    alpha
}

/// Log-probability of `target` under the logits, summing over all monotonic
/// alignments. Infeasible targets score −inf.
pub fn ctc_score(logits: &Mat, target: &[u32]) -> f64 {
    if logits.rows() == 0 {
        return if target.is_empty() { 0.0 } else { f64::NEG_INFINITY };
    }
    let logp = log_probs(logits);
    let ext = extended_labels(target);
    let alpha = alpha_pass(&logp, &ext);
    let t_last = logits.rows() - 1;
    let s_len = ext.len();
    let mut total = alpha.at(t_last, s_len - 1);
    if s_len >= 2 {
        total = log_add(total, alpha.at(t_last, s_len - 2));
    }
    total
}

/// CTC loss −log p(target | logits) and its gradient w.r.t. the raw logits.
/// The guard is enforced first so an infeasible pairing is an error rather
/// than a silent −inf/NaN.
pub fn ctc_loss(logits: &Mat, target: &[u32]) -> Result<(f64, Mat)> {
    let t_len = logits.rows();
    length_guard(t_len, target)?;
    if t_len == 0 {
        return Ok((0.0, Mat::zeros(0, logits.cols())));
    }
    for &tok in target {
        if tok as usize >= logits.cols() || tok == BLANK_ID {
            return Err(Error::Format(format!(
                "ctc target token {tok} outside vocabulary (logit dim {})",
                logits.cols()
            )));
        }
    }
    let logp = log_probs(logits);
    let ext = extended_labels(target);
    let s_len = ext.len();
    let alpha = alpha_pass(&logp, &ext);

    // Beta convention: beta_t(s) covers emissions strictly after t, so
    // alpha_t(s) + beta_t(s) sums to log p(target) over s at every t.
    let mut beta = Mat::from_fn(t_len, s_len, |_, _| f64::NEG_INFINITY);
    *beta.at_mut(t_len - 1, s_len - 1) = 0.0;
    if s_len >= 2 {
        *beta.at_mut(t_len - 1, s_len - 2) = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta.at(t + 1, s) + logp.at(t + 1, ext[s] as usize);
            if s + 1 < s_len {
                acc = log_add(acc, beta.at(t + 1, s + 1) + logp.at(t + 1, ext[s + 1] as usize));
            }
            if s + 2 < s_len && ext[s + 2] != BLANK_ID && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta.at(t + 1, s + 2) + logp.at(t + 1, ext[s + 2] as usize));
            }
            *beta.at_mut(t, s) = acc;
        }
    }

    let mut log_total = alpha.at(t_len - 1, s_len - 1);
    if s_len >= 2 {
        log_total = log_add(log_total, alpha.at(t_len - 1, s_len - 2));
    }
    if !log_total.is_finite() {
        return Err(Error::Run(format!(
            "ctc alignment probability vanished (T={t_len}, U={})",
            target.len()
        )));
    }

    // dL/dlogit = softmax − per-symbol posterior mass.
    let mut grad = Mat::zeros(t_len, logits.cols());
    for t in 0..t_len {
        for k in 0..logits.cols() {
            *grad.at_mut(t, k) = logp.at(t, k).exp();
        }
        for (s, &sym) in ext.iter().enumerate() {
            let g = alpha.at(t, s) + beta.at(t, s) - log_total;
            if g.is_finite() {
                *grad.at_mut(t, sym as usize) -= g.exp();
            }
        }
    }
    Ok((-log_total, grad))
}

/// Collapses a frame-level path: merge consecutive repeats, then drop blanks.
pub fn collapse_path(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK_ID {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Best-path/beam decoding. Beam 1 is exactly the frame-argmax path followed
/// by CTC collapse; larger beams run a label-synchronous prefix beam search
/// (no language model) and return the most probable prefix.
pub fn viterbi_decode(logits: &Mat, beam: usize) -> Vec<u32> {
    assert!(beam >= 1, "beam must be at least 1");
    if logits.rows() == 0 {
        return Vec::new();
    }
    if beam == 1 {
        let path: Vec<u32> = (0..logits.rows())
            .map(|t| {
                let row = logits.row(t);
                (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b }) as u32
            })
            .collect();
        return collapse_path(&path);
    }
    prefix_beam_search(logits, beam)
}

fn prefix_beam_search(logits: &Mat, beam: usize) -> Vec<u32> {
    let logp = log_probs(logits);
    // Prefix -> (log p ending in blank, log p ending in non-blank).
    let mut beams: Vec<(Vec<u32>, (f64, f64))> =
        vec![(Vec::new(), (0.0, f64::NEG_INFINITY))];
    for t in 0..logp.rows() {
        let row = logp.row(t);
        let mut next: HashMapBeams = HashMapBeams::new();
        for (prefix, (pb, pnb)) in &beams {
            let total = log_add(*pb, *pnb);
            // Extend with blank: prefix unchanged.
            next.add_blank(prefix, total + row[BLANK_ID as usize]);
            // Repeat the last symbol: only the non-blank mass continues the
            // same prefix; blank-separated repeats form a new token below.
            if let Some(&last) = prefix.last() {
                next.add_nonblank(prefix, *pnb + row[last as usize]);
            }
            for k in 1..row.len() as u32 {
                let p_k = row[k as usize];
                let mut ext = prefix.clone();
                ext.push(k);
                let mass = if Some(&k) == prefix.last() {
                    *pb + p_k // repeat token requires the blank-ended mass
                } else {
                    total + p_k
                };
                next.add_nonblank(&ext, mass);
            }
        }
        beams = next.top(beam);
    }
    beams
        .into_iter()
        .max_by(|(pa, (ba, na)), (pb_, (bb, nb))| {
            let sa = log_add(*ba, *na);
            let sb = log_add(*bb, *nb);
            sa.partial_cmp(&sb)
                .unwrap()
                .then_with(|| pb_.len().cmp(&pa.len())) // prefer shorter on ties
        })
        .map(|(p, _)| p)
        .unwrap_or_default()
}

struct HashMapBeams {
    map: std::collections::HashMap<Vec<u32>, (f64, f64)>,
}

impl HashMapBeams {
    fn new() -> Self {
        HashMapBeams {
            map: std::collections::HashMap::new(),
        }
    }

    fn add_blank(&mut self, prefix: &[u32], mass: f64) {
        let e = self
            .map
            .entry(prefix.to_vec())
            .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
        e.0 = log_add(e.0, mass);
    }

    fn add_nonblank(&mut self, prefix: &[u32], mass: f64) {
        let e = self
            .map
            .entry(prefix.to_vec())
            .or_insert((f64::NEG_INFINITY, f64::NEG_INFINITY));
        e.1 = log_add(e.1, mass);
    }

    fn top(self, beam: usize) -> Vec<(Vec<u32>, (f64, f64))> {
        let mut all: Vec<(Vec<u32>, (f64, f64))> = self.map.into_iter().collect();
        all.sort_by(|(pa, (ba, na)), (pb, (bb, nb))| {
            let sa = log_add(*ba, *na);
            let sb = log_add(*bb, *nb);
            sb.partial_cmp(&sa).unwrap().then_with(|| pa.cmp(pb))
        });
        all.truncate(beam);
        all
    }
}
