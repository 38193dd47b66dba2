//! Property tests over random inputs: rotation algebra, plan structure,
//! mask partitioning and merge weights.

use std::num::NonZeroUsize;

use proptest::prelude::*;

use dipe_core::attention::{build_masks, merge_lse, softmax_with_lse};
use dipe_core::mrope::{mrope_rotate, ChunkPartition, PositionTuple};
use dipe_core::plan::{
    build_plan, extend_plan, IndexMode, Modality, ModalitySegment, PositionPlan,
};
use dipe_core::rope::{rotate, RopeConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn segment_strategy() -> impl Strategy<Value = ModalitySegment> {
    prop_oneof![
        (1usize..24).prop_map(ModalitySegment::text),
        ((1usize..4), (1usize..4)).prop_map(|(r, c)| ModalitySegment::image(r, c)),
    ]
}

fn layout_strategy() -> impl Strategy<Value = Vec<ModalitySegment>> {
    proptest::collection::vec(segment_strategy(), 1..6)
}

fn plan_strategy() -> impl Strategy<Value = PositionPlan> {
    layout_strategy().prop_map(|layout| build_plan(&layout, IndexMode::Mrope).unwrap())
}

proptest! {
    #[test]
    fn rotations_compose_additively(
        dim in (1usize..32).prop_map(|p| p * 2),
        a in -500.0f64..500.0,
        b in -500.0f64..500.0,
        seed in any::<u64>(),
    ) {
        let cfg = RopeConfig::new(dim, 10000.0).unwrap();
        let mut rng = dipe_core::rng::DetRng::new(seed);
        let v = rng.normal_vec(dim, 1.0);
        let stepwise = rotate(&rotate(&v, a, &cfg).unwrap(), b, &cfg).unwrap();
        let direct = rotate(&v, a + b, &cfg).unwrap();
        for (x, y) in stepwise.iter().zip(direct.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_dots_depend_only_on_offset(
        dim in (1usize..32).prop_map(|p| p * 2),
        m in 0u32..20_000,
        n in 0u32..20_000,
        seed in any::<u64>(),
    ) {
        let cfg = RopeConfig::new(dim, 10000.0).unwrap();
        let mut rng = dipe_core::rng::DetRng::new(seed);
        let q = rng.normal_vec(dim, 1.0);
        let k = rng.normal_vec(dim, 1.0);
        let lhs = dot(
            &rotate(&q, m as f64, &cfg).unwrap(),
            &rotate(&k, n as f64, &cfg).unwrap(),
        );
        let rhs = dot(&q, &rotate(&k, n as f64 - m as f64, &cfg).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn chunked_rotation_preserves_norm(
        t in 0u32..5_000,
        h in 0u32..5_000,
        w in 0u32..5_000,
        seed in any::<u64>(),
    ) {
        let cfg = RopeConfig::new(48, 10000.0).unwrap();
        let part = ChunkPartition::equal_thirds(&cfg).unwrap();
        let mut rng = dipe_core::rng::DetRng::new(seed);
        let v = rng.normal_vec(48, 1.0);
        let out = mrope_rotate(&v, &PositionTuple::new(t, h, w), &cfg, &part).unwrap();
        let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-9);
    }

    #[test]
    fn plans_are_structurally_sound(plan in plan_strategy()) {
        prop_assert_eq!(plan.spe.len(), plan.ape.len());
        prop_assert_eq!(plan.spe.len(), plan.modality.len());
        prop_assert_eq!(plan.segments.last().unwrap().end, plan.len());

        // Every token of a segment shares the segment's anchor, and the
        // anchor is the segment's first sequential tuple.
        for span in &plan.segments {
            let anchor = plan.spe[span.start];
            for i in span.start..span.end {
                prop_assert_eq!(plan.ape[i], anchor);
                prop_assert_eq!(plan.modality[i], span.modality);
            }
        }

        // Anchors strictly increase in t; sequential maxima never decrease.
        let anchors: Vec<u32> = plan.segments.iter().map(|s| plan.ape[s.start].t).collect();
        for pair in anchors.windows(2) {
            prop_assert!(pair[1] > pair[0]);
        }
        let maxima: Vec<u32> = plan
            .segments
            .iter()
            .map(|s| {
                plan.spe[s.start..s.end]
                    .iter()
                    .map(|p| p.max_component())
                    .max()
                    .unwrap()
            })
            .collect();
        for pair in maxima.windows(2) {
            prop_assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn plan_json_round_trips(plan in plan_strategy()) {
        let back = PositionPlan::from_json(&plan.to_json()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn extending_text_never_moves_existing_entries(
        plan in plan_strategy(),
        extra in 1usize..12,
    ) {
        let grown = extend_plan(&plan, NonZeroUsize::new(extra).unwrap(), Modality::Text);
        prop_assert_eq!(&grown.spe[..plan.len()], &plan.spe[..]);
        prop_assert_eq!(&grown.ape[..plan.len()], &plan.ape[..]);
        prop_assert_eq!(grown.len(), plan.len() + extra);
        // All appended tokens share one anchor.
        let anchor = grown.ape[grown.len() - 1];
        for i in plan.len()..grown.len() {
            prop_assert_eq!(grown.ape[i], anchor);
        }
    }

    #[test]
    fn masks_partition_the_permitted_set(plan in plan_strategy(), causal in any::<bool>()) {
        let masks = build_masks(&plan, causal);
        let n = plan.len();
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                let permitted = !causal || j <= i;
                prop_assert!(!(masks.intra[i][j] && masks.inter[i][j]));
                prop_assert_eq!(masks.intra[i][j] || masks.inter[i][j], permitted);
                count += (masks.intra[i][j] || masks.inter[i][j]) as usize;
            }
        }
        let expected = if causal { n * (n + 1) / 2 } else { n * n };
        prop_assert_eq!(count, expected);
    }

    #[test]
    fn merge_weights_always_partition_unity(
        l1 in -30.0f64..30.0,
        l2 in -30.0f64..30.0,
        o1 in -5.0f64..5.0,
        o2 in -5.0f64..5.0,
    ) {
        let (out, lse, alpha) = merge_lse(&[o1], l1, &[o2], l2);
        prop_assert_eq!(alpha + (1.0 - alpha), 1.0);
        let want_alpha = l1.exp() / (l1.exp() + l2.exp());
        prop_assert!((alpha - want_alpha).abs() < 1e-12);
        let want_lse = (l1.exp() + l2.exp()).ln();
        prop_assert!((lse - want_lse).abs() < 1e-9);
        prop_assert!((out[0] - (want_alpha * o1 + (1.0 - want_alpha) * o2)).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_weights_sum_to_unity(
        logits in proptest::collection::vec(-50.0f64..50.0, 1..40),
        mask_seed in any::<u64>(),
    ) {
        let mut rng = dipe_core::rng::DetRng::new(mask_seed);
        let mask: Vec<bool> = logits.iter().map(|_| rng.next_below(3) > 0).collect();
        let (weights, lse) = softmax_with_lse(&logits, &mask);
        let total: f64 = weights.iter().sum();
        if mask.iter().any(|&b| b) {
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(lse.is_finite());
        } else {
            prop_assert_eq!(total, 0.0);
            prop_assert_eq!(lse, f64::NEG_INFINITY);
        }
        for (w, &on) in weights.iter().zip(mask.iter()) {
            prop_assert!(*w >= 0.0);
            if !on {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }
}
