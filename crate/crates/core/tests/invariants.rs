//! Property tests for invariants that must hold on all inputs.

use proptest::prelude::*;

use speechlab_core::features::{FeatureKind, FeatureSequence};
use speechlab_core::labels::{resample_labels, LabelSequence};
use speechlab_core::masking::{
    apply_post_mask, project_mask, sample_mask_plan, MaskEmbedding,
};
use speechlab_core::mat::Mat;
use speechlab_core::rng::Rng;
use speechlab_core::schedule::LrSchedule;
use speechlab_core::wer::edit_distance;

proptest! {
    #[test]
    fn post_mask_preserves_unmasked_rows_bit_exactly(
        seed in 0u64..5000,
        t in 1usize..80,
        d in 1usize..12,
        prob in 0.0f64..1.0,
        span in 1usize..12,
    ) {
        let mut rng = Rng::seed_from(seed);
        let f = FeatureSequence::new(
            Mat::from_fn(t, d, |_, _| rng.uniform(-3.0, 3.0)),
            20,
            FeatureKind::Latent,
        );
        let emb = MaskEmbedding::new(d, &mut rng);
        let plan = sample_mask_plan(t, prob, span, &mut rng);
        let out = apply_post_mask(&f, &plan, &emb).unwrap();
        for i in 0..t {
            if plan.masked[i] {
                prop_assert_eq!(out.frames.row(i), emb.vector.value.as_slice());
            } else {
                prop_assert_eq!(out.frames.row(i), f.frames.row(i));
            }
        }
    }

    #[test]
    fn mask_flags_match_span_cover(seed in 0u64..5000, t in 1usize..120, span in 1usize..15) {
        let mut rng = Rng::seed_from(seed);
        let plan = sample_mask_plan(t, 0.2, span, &mut rng);
        let mut cover = vec![false; t];
        for &(start, len) in &plan.spans {
            for flag in &mut cover[start..start + len] {
                *flag = true;
            }
        }
        prop_assert_eq!(cover, plan.masked);
    }

    #[test]
    fn projected_mask_is_any_of_window(seed in 0u64..5000, windows in 1usize..30, factor in 1usize..5) {
        let mut rng = Rng::seed_from(seed);
        let t = windows * factor;
        let plan = sample_mask_plan(t, 0.15, 3, &mut rng);
        let down = project_mask(&plan, factor, windows);
        for i in 0..windows {
            let any = plan.masked[i * factor..(i + 1) * factor].iter().any(|&m| m);
            prop_assert_eq!(down.masked[i], any);
        }
    }

    #[test]
    fn resample_twice_by_two_is_once_by_four(len in 1usize..200, classes in 2u32..20) {
        let ids: Vec<u32> = (0..len as u32).map(|i| (i * 7 + 3) % classes).collect();
        let l = LabelSequence::new(ids, 10, classes as usize).unwrap();
        let twice = resample_labels(&resample_labels(&l, 2), 2);
        let once = resample_labels(&l, 4);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn edit_distance_metric_properties(
        a in proptest::collection::vec(0u8..4, 0..12),
        b in proptest::collection::vec(0u8..4, 0..12),
    ) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
        prop_assert!(edit_distance(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn schedules_stay_within_bounds_and_start_at_zero(
        peak in 1e-6f64..1e-2,
        warmup in 1u64..500,
        hold in 0u64..500,
        decay in 1u64..500,
    ) {
        let lin = LrSchedule::linear(peak, warmup, decay);
        let tri = LrSchedule::tristage(peak, warmup, hold, decay, 0.05);
        prop_assert_eq!(lin.lr_at(0), 0.0);
        prop_assert_eq!(tri.lr_at(0), 0.0);
        for step in (0..warmup + hold + decay + 100).step_by(7) {
            for s in [&lin, &tri] {
                let lr = s.lr_at(step);
                prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr), "step {} lr {}", step, lr);
            }
        }
        prop_assert!((lin.lr_at(warmup) - peak).abs() <= peak * 1e-12);
        prop_assert!((tri.lr_at(warmup) - peak).abs() <= peak * 1e-12);
    }
}
