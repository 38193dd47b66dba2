//! Seeded construction of attention cases and plans.
//!
//! These builders feed the self-check suite, the acceptance tests and the
//! `attend` CLI workflow. Content is deterministic in the seed; the
//! distractor family additionally guarantees that image and question tokens
//! carry identical activations across every distractor length.

use num_traits::Float;

use crate::attention::{AttentionCase, IntraImageMask, TokenArray};
use crate::mrope::ChunkPartition;
use crate::plan::{build_plan, IndexMode, ModalitySegment, PositionPlan};
use crate::real;
use crate::rng::DetRng;
use crate::rope::RopeConfig;

fn draw_tokens<T: Float>(
    rng: &mut DetRng,
    tokens: usize,
    heads: usize,
    dim: usize,
) -> TokenArray<T> {
    (0..tokens)
        .map(|_| {
            (0..heads)
                .map(|_| (0..dim).map(|_| real::<T>(rng.next_normal())).collect())
                .collect()
        })
        .collect()
}

/// A case with unit-normal activations over the given segment layout.
pub fn random_case<T: Float>(
    seed: u64,
    segments: &[ModalitySegment],
    heads: usize,
    config: RopeConfig,
    partition: ChunkPartition,
    causal: bool,
) -> AttentionCase<T> {
    let plan = build_plan(segments, IndexMode::Mrope).expect("valid segment layout");
    let n = plan.len();
    let dim = config.head_dim;
    let mut rng = DetRng::stream(seed, 0xca5e);
    AttentionCase {
        queries: draw_tokens(&mut rng, n, heads, dim),
        keys: draw_tokens(&mut rng, n, heads, dim),
        values: draw_tokens(&mut rng, n, heads, dim),
        plan,
        config,
        partition,
        causal,
        intra_image: IntraImageMask::Causal,
    }
}

/// Random alternating segment layout with at most `max_tokens` tokens.
pub fn random_layout(rng: &mut DetRng, max_tokens: usize) -> Vec<ModalitySegment> {
    let mut segments = Vec::new();
    let mut remaining = max_tokens.max(1);
    let mut visual_next = rng.next_below(2) == 0;
    while remaining > 0 {
        let seg = if visual_next {
            let rows = 1 + rng.next_below(4) as usize;
            let cols = 1 + rng.next_below(4) as usize;
            if rows * cols > remaining {
                ModalitySegment::text(remaining.min(1 + rng.next_below(8) as usize))
            } else {
                ModalitySegment::image(rows, cols)
            }
        } else {
            ModalitySegment::text((1 + rng.next_below(24) as usize).min(remaining))
        };
        remaining -= seg.length.min(remaining);
        segments.push(seg);
        visual_next = !visual_next;
        if rng.next_below(6) == 0 {
            break;
        }
    }
    if segments.is_empty() {
        segments.push(ModalitySegment::text(1));
    }
    segments
}

/// Plan over a random layout; text-only layouts occur naturally.
pub fn random_plan(rng: &mut DetRng, max_tokens: usize) -> PositionPlan {
    let layout = random_layout(rng, max_tokens);
    build_plan(&layout, IndexMode::Mrope).expect("random layout is valid")
}

/// One member of the distractor family `[Image(grid), Text(L + question)]`.
///
/// Image and question activations come from their own seed streams and are
/// byte-identical for every `distractor_len`; distractor activations are a
/// prefix of one shared pool, so shorter members are literal prefixes of
/// longer ones in the text region.
pub fn distractor_family_case<T: Float>(
    seed: u64,
    grid: (usize, usize),
    question_len: usize,
    distractor_len: usize,
    heads: usize,
    config: RopeConfig,
    partition: ChunkPartition,
) -> AttentionCase<T> {
    let dim = config.head_dim;
    let n_visual = grid.0 * grid.1;
    let mut image_rng = DetRng::stream(seed, 0x17a6e);
    let mut question_rng = DetRng::stream(seed, 0x9ae57);
    let mut distractor_rng = DetRng::stream(seed, 0xd157);

    let mut queries = draw_tokens::<T>(&mut image_rng, n_visual, heads, dim);
    let mut keys = draw_tokens::<T>(&mut image_rng, n_visual, heads, dim);
    let mut values = draw_tokens::<T>(&mut image_rng, n_visual, heads, dim);

    queries.extend(draw_tokens::<T>(
        &mut distractor_rng,
        distractor_len,
        heads,
        dim,
    ));
    keys.extend(draw_tokens::<T>(
        &mut distractor_rng,
        distractor_len,
        heads,
        dim,
    ));
    values.extend(draw_tokens::<T>(
        &mut distractor_rng,
        distractor_len,
        heads,
        dim,
    ));

    queries.extend(draw_tokens::<T>(
        &mut question_rng,
        question_len,
        heads,
        dim,
    ));
    keys.extend(draw_tokens::<T>(
        &mut question_rng,
        question_len,
        heads,
        dim,
    ));
    values.extend(draw_tokens::<T>(
        &mut question_rng,
        question_len,
        heads,
        dim,
    ));

    let plan = build_plan(
        &[
            ModalitySegment::image(grid.0, grid.1),
            ModalitySegment::text(distractor_len + question_len),
        ],
        IndexMode::Mrope,
    )
    .expect("distractor layout is valid");

    AttentionCase {
        queries,
        keys,
        values,
        plan,
        config,
        partition,
        causal: true,
        intra_image: IntraImageMask::Causal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (RopeConfig, ChunkPartition) {
        let cfg = RopeConfig::new(12, 10000.0).unwrap();
        (cfg, ChunkPartition::equal_thirds(&cfg).unwrap())
    }

    #[test]
    fn random_case_is_seed_deterministic() {
        let (cfg, part) = setup();
        let layout = [ModalitySegment::text(3), ModalitySegment::image(2, 2)];
        let a = random_case::<f64>(5, &layout, 2, cfg, part, true);
        let b = random_case::<f64>(5, &layout, 2, cfg, part, true);
        assert_eq!(a, b);
        let c = random_case::<f64>(6, &layout, 2, cfg, part, true);
        assert_ne!(a.queries, c.queries);
    }

    #[test]
    fn random_layouts_are_valid_and_bounded() {
        let mut rng = DetRng::new(8);
        for _ in 0..200 {
            let layout = random_layout(&mut rng, 64);
            let plan = build_plan(&layout, IndexMode::Mrope).unwrap();
            assert!(!plan.is_empty() && plan.len() <= 64);
        }
    }

    #[test]
    fn distractor_family_shares_image_and_question_content() {
        let (cfg, part) = setup();
        let short = distractor_family_case::<f64>(1, (2, 2), 3, 0, 1, cfg, part);
        let long = distractor_family_case::<f64>(1, (2, 2), 3, 16, 1, cfg, part);
        assert_eq!(&short.queries[..4], &long.queries[..4]);
        assert_eq!(&short.keys[..4], &long.keys[..4]);
        let qs = short.queries.len();
        let ql = long.queries.len();
        assert_eq!(&short.queries[qs - 3..], &long.queries[ql - 3..]);
        assert_eq!(&short.keys[qs - 3..], &long.keys[ql - 3..]);
        // Distractor prefixes coincide as well.
        let mid = distractor_family_case::<f64>(1, (2, 2), 3, 8, 1, cfg, part);
        assert_eq!(&mid.queries[4..12], &long.queries[4..12]);
        assert_eq!(short.plan.len() + 16, long.plan.len());
    }
}
