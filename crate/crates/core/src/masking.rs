//! Span masking: sampling plans, applying them before or after the
//! front-end, and projecting plans across frameshift changes.

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::mat::Mat;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

/// Which frames are masked, plus the spans that produced the flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub masked: Vec<bool>,
    pub spans: Vec<(usize, usize)>,
    pub span_start_prob: f64,
    pub span_len: usize,
}

impl MaskPlan {
    pub fn empty(len: usize) -> Self {
        MaskPlan {
            masked: vec![false; len],
            spans: Vec::new(),
            span_start_prob: 0.0,
            span_len: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.masked.is_empty() {
            0.0
        } else {
            self.masked_count() as f64 / self.masked.len() as f64
        }
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Samples a span plan: every index is independently a span start with
/// probability `span_start_prob`, and each start masks `span_len` consecutive
/// frames. Spans may overlap and are clipped at the sequence end.
pub fn sample_mask_plan(
    t_len: usize,
    span_start_prob: f64,
    span_len: usize,
    rng: &mut Rng,
) -> MaskPlan {
    assert!((0.0..=1.0).contains(&span_start_prob), "probability out of range");
    assert!(span_len >= 1, "span length must be at least 1");
    let mut masked = vec![false; t_len];
    let mut spans = Vec::new();
    for start in 0..t_len {
        if rng.bernoulli(span_start_prob) {
            let end = (start + span_len).min(t_len);
            spans.push((start, end - start));
            for flag in &mut masked[start..end] {
                *flag = true;
            }
        }
    }
    MaskPlan {
        masked,
        spans,
        span_start_prob,
        span_len,
    }
}

/// Learnable embedding substituted for masked latent frames.
#[derive(Debug, Clone)]
pub struct MaskEmbedding {
    pub vector: Param,
}

impl MaskEmbedding {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        MaskEmbedding {
            vector: Param::new((0..dim).map(|_| rng.uniform(-0.1, 0.1)).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

impl Parameterized for MaskEmbedding {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "embedding"), &mut self.vector);
    }
}

/// Replaces masked latent frames with the learnable mask embedding.
/// Unmasked frames are copied bit-exactly.
pub fn apply_post_mask(
    f: &FeatureSequence,
    plan: &MaskPlan,
    emb: &MaskEmbedding,
) -> Result<FeatureSequence> {
    if plan.len() != f.num_frames() {
        return Err(Error::MaskPlanLength {
            plan: plan.len(),
            seq: f.num_frames(),
        });
    }
    if emb.dim() != f.dim() {
        return Err(Error::MaskEmbeddingDim {
            embedding: emb.dim(),
            features: f.dim(),
        });
    }
    let mut frames = f.frames.clone();
    for (t, &m) in plan.masked.iter().enumerate() {
        if m {
            frames.row_mut(t).copy_from_slice(&emb.vector.value);
        }
    }
    Ok(FeatureSequence::new(frames, f.frameshift_ms, f.kind))
}

/// Accumulates the mask-embedding gradient: the sum of upstream gradients
/// over masked rows. Returns the gradient left for the producer of `f`
/// (masked rows zeroed, since those frames never reached the loss).
pub fn post_mask_backward(plan: &MaskPlan, upstream: &Mat, emb: &mut MaskEmbedding) -> Mat {
    let mut through = upstream.clone();
    for (t, &m) in plan.masked.iter().enumerate() {
        if m {
            for (g, &u) in emb.vector.grad.iter_mut().zip(upstream.row(t)) {
                *g += u;
            }
            for v in through.row_mut(t) {
                *v = 0.0;
            }
        }
    }
    through
}

/// Masks spectrogram frames in place before downsampling, writing `fill`
/// into every masked frame. On CMVN-normalized features a fill of zero is
/// the per-dimension mean.
pub fn apply_pre_mask(f: &FeatureSequence, plan: &MaskPlan, fill: f64) -> Result<FeatureSequence> {
    if plan.len() != f.num_frames() {
        return Err(Error::MaskPlanLength {
            plan: plan.len(),
            seq: f.num_frames(),
        });
    }
    let mut frames = f.frames.clone();
    for (t, &m) in plan.masked.iter().enumerate() {
        if m {
            for v in frames.row_mut(t) {
                *v = fill;
            }
        }
    }
    Ok(FeatureSequence::new(frames, f.frameshift_ms, f.kind))
}

/// Projects a base-rate plan onto a coarser frameshift: target frame i is
/// masked iff any of its `factor` source frames is masked. The target length
/// is the downsampled sequence length, which never exceeds ceil(T/factor).
pub fn project_mask(plan: &MaskPlan, factor: usize, target_len: usize) -> MaskPlan {
    assert!(factor >= 1);
    let mut masked = vec![false; target_len];
    for (i, flag) in masked.iter_mut().enumerate() {
        let lo = i * factor;
        let hi = ((i + 1) * factor).min(plan.len());
        *flag = plan.masked[lo..hi].iter().any(|&m| m);
    }
    MaskPlan {
        masked,
        spans: Vec::new(),
        span_start_prob: plan.span_start_prob,
        span_len: plan.span_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    #[test]
    fn zero_probability_masks_nothing() {
        let mut rng = Rng::seed_from(1);
        let plan = sample_mask_plan(500, 0.0, 10, &mut rng);
        assert_eq!(plan.masked_count(), 0);
        assert!(plan.spans.is_empty());
    }

    #[test]
    fn unit_probability_masks_everything() {
        let mut rng = Rng::seed_from(2);
        let plan = sample_mask_plan(100, 1.0, 10, &mut rng);
        assert_eq!(plan.masked_count(), 100);
    }

    #[test]
    fn zero_length_sequence_gives_empty_plan() {
        let mut rng = Rng::seed_from(3);
        let plan = sample_mask_plan(0, 0.5, 10, &mut rng);
        assert!(plan.is_empty());
    }

    #[test]
    fn interior_coverage_converges_to_formula() {
        // Away from the sequence end, P(masked) = 1 − (1−p)^L.
        let mut rng = Rng::seed_from(4);
        let (p, l, t) = (0.08, 10usize, 200_000usize);
        let plan = sample_mask_plan(t, p, l, &mut rng);
        let interior: f64 = plan.masked[..t - l].iter().filter(|&&m| m).count() as f64
            / (t - l) as f64;
        let expect = 1.0 - (1.0 - p).powi(l as i32);
        assert!(
            (interior - expect).abs() < 0.01,
            "interior {interior} vs {expect}"
        );
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let a = sample_mask_plan(1000, 0.08, 10, &mut Rng::seed_from(99));
        let b = sample_mask_plan(1000, 0.08, 10, &mut Rng::seed_from(99));
        assert_eq!(a, b);
    }

    #[test]
    fn spans_are_clipped_at_end() {
        let mut rng = Rng::seed_from(11);
        let plan = sample_mask_plan(12, 0.9, 10, &mut rng);
        for &(start, len) in &plan.spans {
            assert!(start + len <= 12);
        }
    }

    fn latent(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(
            Mat::from_fn(t, d, |r, c| (r * d + c) as f64 * 0.1),
            20,
            FeatureKind::Latent,
        )
    }

    #[test]
    fn post_mask_empty_plan_is_identity() {
        let mut rng = Rng::seed_from(5);
        let f = latent(6, 4);
        let emb = MaskEmbedding::new(4, &mut rng);
        let out = apply_post_mask(&f, &MaskPlan::empty(6), &emb).unwrap();
        assert_eq!(out.frames, f.frames);
    }

    #[test]
    fn post_mask_full_plan_replaces_every_row() {
        let mut rng = Rng::seed_from(6);
        let f = latent(5, 3);
        let emb = MaskEmbedding::new(3, &mut rng);
        let plan = sample_mask_plan(5, 1.0, 2, &mut rng);
        let out = apply_post_mask(&f, &plan, &emb).unwrap();
        for t in 0..5 {
            assert_eq!(out.frames.row(t), emb.vector.value.as_slice());
        }
    }

    #[test]
    fn post_mask_never_touches_unmasked_rows() {
        let mut rng = Rng::seed_from(7);
        let f = latent(50, 8);
        let emb = MaskEmbedding::new(8, &mut rng);
        let plan = sample_mask_plan(50, 0.2, 5, &mut rng);
        let out = apply_post_mask(&f, &plan, &emb).unwrap();
        for t in 0..50 {
            if !plan.masked[t] {
                assert_eq!(out.frames.row(t), f.frames.row(t), "row {t}");
            }
        }
    }

    #[test]
    fn post_mask_dimension_mismatch_errors() {
        let mut rng = Rng::seed_from(8);
        let f = latent(4, 6);
        let emb = MaskEmbedding::new(5, &mut rng);
        let plan = MaskPlan::empty(4);
        assert!(matches!(
            apply_post_mask(&f, &plan, &emb),
            Err(Error::MaskEmbeddingDim { .. })
        ));
    }

    #[test]
    fn post_mask_gradient_sums_masked_rows() {
        let mut rng = Rng::seed_from(9);
        let mut emb = MaskEmbedding::new(3, &mut rng);
        let mut plan = MaskPlan::empty(4);
        plan.masked[1] = true;
        plan.masked[3] = true;
        let upstream = Mat::from_fn(4, 3, |t, c| (t * 3 + c) as f64);
        let through = post_mask_backward(&plan, &upstream, &mut emb);
        // grad = row1 + row3
        assert_eq!(emb.vector.grad, vec![3.0 + 9.0, 4.0 + 10.0, 5.0 + 11.0]);
        assert_eq!(through.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(through.row(0), upstream.row(0));
    }

    #[test]
    fn pre_mask_identity_and_fill() {
        let f = latent(6, 4);
        let out = apply_pre_mask(&f, &MaskPlan::empty(6), 0.0).unwrap();
        assert_eq!(out.frames, f.frames);
        let mut rng = Rng::seed_from(10);
        let full = sample_mask_plan(6, 1.0, 3, &mut rng);
        let filled = apply_pre_mask(&f, &full, 0.25).unwrap();
        assert!(filled.frames.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn pre_mask_length_mismatch_errors() {
        let f = latent(6, 4);
        assert!(matches!(
            apply_pre_mask(&f, &MaskPlan::empty(5), 0.0),
            Err(Error::MaskPlanLength { .. })
        ));
    }

    #[test]
    fn project_mask_any_source_rule() {
        let mut plan = MaskPlan::empty(8);
        plan.masked[3] = true; // source index 3, factor 2 -> target 1
        let down = project_mask(&plan, 2, 4);
        assert_eq!(down.masked, vec![false, true, false, false]);
    }

    #[test]
    fn project_mask_preserves_extremes() {
        let empty = MaskPlan::empty(10);
        assert_eq!(project_mask(&empty, 2, 5).masked_count(), 0);
        let mut full = MaskPlan::empty(10);
        full.masked.iter_mut().for_each(|m| *m = true);
        assert_eq!(project_mask(&full, 2, 5).masked_count(), 5);
    }

    #[test]
    fn project_mask_window_enumeration_factor_2() {
        // All four combinations of a 2-frame source window.
        for (a, b, expect) in [
            (false, false, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ] {
            let mut plan = MaskPlan::empty(2);
            plan.masked[0] = a;
            plan.masked[1] = b;
            let down = project_mask(&plan, 2, 1);
            assert_eq!(down.masked[0], expect, "({a},{b})");
        }
    }

    #[test]
    fn project_mask_is_monotone() {
        let mut rng = Rng::seed_from(12);
        let base = sample_mask_plan(64, 0.1, 4, &mut rng);
        let down = project_mask(&base, 4, 16);
        let mut more = base.clone();
        for t in 0..64 {
            if rng.bernoulli(0.2) {
                more.masked[t] = true;
            }
        }
        let down_more = project_mask(&more, 4, 16);
        for i in 0..16 {
            assert!(!down.masked[i] || down_more.masked[i], "unmasked at {i}");
        }
    }
}
