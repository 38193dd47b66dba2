//! Append-only KV cache with split-kernel decoding.
//!
//! Anchoring is strictly a query-side intervention: keys are stored already
//! rotated under their sequential tuples and are never touched again, so a
//! cache built for sequential attention works unmodified. Each decode step
//! appends one rotated key and raw value, extends the plan, and evaluates the
//! new row with the same per-row kernels batch execution uses — step-by-step
//! decoding is therefore bitwise equal to the matching rows of a full pass.

use num_traits::Float;

use crate::attention::{masked_row_attention, merge_lse, AttentionCase, RotatedCase, TokenArray};
use crate::error::{Error, Result};
use crate::mrope::MropeRotator;
use crate::plan::{extend_plan, Modality, PositionPlan};
use crate::real;
use crate::rope::RopeConfig;

#[derive(Debug, Clone)]
pub struct KvCache<T> {
    rotated_keys: TokenArray<T>,
    values: TokenArray<T>,
    plan: PositionPlan,
    config: RopeConfig,
    rotator: MropeRotator,
    heads: usize,
}

impl<T: Float> KvCache<T> {
    /// Build a cache from a prefix case: rotate every key under its
    /// sequential tuple and keep values verbatim.
    pub fn prefill(case: &AttentionCase<T>) -> Result<Self> {
        let rotated = RotatedCase::new(case)?;
        Ok(Self {
            rotated_keys: rotated.keys.clone(),
            values: case.values.clone(),
            plan: case.plan.clone(),
            config: case.config,
            rotator: MropeRotator::new(&case.config, &case.partition)?,
            heads: case.n_heads(),
        })
    }

    pub fn len(&self) -> usize {
        self.rotated_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotated_keys.is_empty()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn plan(&self) -> &PositionPlan {
        &self.plan
    }

    /// Keys as stored (already rotated); exposed so callers can verify the
    /// append-only contract.
    pub fn rotated_keys(&self) -> &TokenArray<T> {
        &self.rotated_keys
    }

    pub fn values(&self) -> &TokenArray<T> {
        &self.values
    }

    fn check_row(&self, name: &str, row: &[Vec<T>]) -> Result<()> {
        if row.len() != self.heads {
            return Err(Error::PlanMismatch {
                detail: format!(
                    "{name} carries {} heads, cache has {}",
                    row.len(),
                    self.heads
                ),
            });
        }
        for head in row {
            if head.len() != self.config.head_dim {
                return Err(Error::DimMismatch {
                    expected: self.config.head_dim,
                    got: head.len(),
                });
            }
        }
        Ok(())
    }
}

/// Decode one token: extend the plan, append the rotated key and value, and
/// attend the new row (causally, self included) against the whole cache.
///
/// Returns the new token's output per head. Earlier cache entries are never
/// modified.
pub fn decode_step<T: Float>(
    cache: &mut KvCache<T>,
    new_q: &[Vec<T>],
    new_k: &[Vec<T>],
    new_v: &[Vec<T>],
    modality: Modality,
) -> Result<Vec<Vec<T>>> {
    cache.check_row("query", new_q)?;
    cache.check_row("key", new_k)?;
    cache.check_row("value", new_v)?;

    let plan = extend_plan(&cache.plan, std::num::NonZeroUsize::MIN, modality);
    let i = plan.len() - 1;
    let spe = plan.spe[i];
    let ape = plan.ape[i];

    let rotate = |row: &[Vec<T>], t: f64, h: f64, w: f64| -> Vec<Vec<T>> {
        row.iter()
            .map(|vec| {
                let mut out = vec.clone();
                cache.rotator.rotate_in_place(&mut out, t, h, w);
                out
            })
            .collect()
    };
    let k_rot = rotate(new_k, spe.t as f64, spe.h as f64, spe.w as f64);
    let q_spe = rotate(new_q, spe.t as f64, spe.h as f64, spe.w as f64);
    let q_ape = rotate(new_q, ape.t as f64, ape.h as f64, ape.w as f64);

    cache.rotated_keys.push(k_rot);
    cache.values.push(new_v.to_vec());
    cache.plan = plan;

    let scale = real::<T>(1.0 / (cache.config.head_dim as f64).sqrt());
    let modality_of = &cache.plan.modality;
    let mut scratch: Vec<(u32, T)> = Vec::new();
    let mut output = Vec::with_capacity(cache.heads);
    for h in 0..cache.heads {
        let (o1, l1) = masked_row_attention(
            &q_spe[h],
            &cache.rotated_keys,
            &cache.values,
            h,
            i + 1,
            |j| modality_of[j] == modality,
            scale,
            &mut scratch,
        );
        let (o2, l2) = masked_row_attention(
            &q_ape[h],
            &cache.rotated_keys,
            &cache.values,
            h,
            i + 1,
            |j| modality_of[j] != modality,
            scale,
            &mut scratch,
        );
        let (o, _, _) = merge_lse(&o1, l1, &o2, l2);
        output.push(o);
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::attend_split;
    use crate::cases::random_case;
    use crate::mrope::ChunkPartition;
    use crate::plan::ModalitySegment;
    use crate::rng::DetRng;

    fn setup() -> (RopeConfig, ChunkPartition) {
        let cfg = RopeConfig::new(12, 10000.0).unwrap();
        (cfg, ChunkPartition::equal_thirds(&cfg).unwrap())
    }

    fn prefix_of(
        case: &AttentionCase<f64>,
        tokens: usize,
        plan: PositionPlan,
    ) -> AttentionCase<f64> {
        AttentionCase {
            queries: case.queries[..tokens].to_vec(),
            keys: case.keys[..tokens].to_vec(),
            values: case.values[..tokens].to_vec(),
            plan,
            ..case.clone()
        }
    }

    #[test]
    fn stepwise_decode_matches_batch_rows() {
        let (cfg, part) = setup();
        // Full sequence: image(2x2) + 4 prefix text tokens + 6 decoded ones.
        let full = random_case::<f64>(
            99,
            &[ModalitySegment::image(2, 2), ModalitySegment::text(10)],
            2,
            cfg,
            part,
            true,
        );
        let batch = attend_split(&full).unwrap();

        let prefix_plan = crate::plan::build_plan(
            &[ModalitySegment::image(2, 2), ModalitySegment::text(4)],
            crate::plan::IndexMode::Mrope,
        )
        .unwrap();
        let mut cache = KvCache::prefill(&prefix_of(&full, 8, prefix_plan)).unwrap();

        for t in 8..14 {
            let out = decode_step(
                &mut cache,
                &full.queries[t],
                &full.keys[t],
                &full.values[t],
                Modality::Text,
            )
            .unwrap();
            for (h, (out_row, batch_row)) in out.iter().zip(batch.output[t].iter()).enumerate() {
                for (a, b) in out_row.iter().zip(batch_row.iter()) {
                    assert!((a - b).abs() < 1e-12, "row {t} head {h}: {a} vs {b}");
                }
            }
        }
        assert_eq!(cache.plan().len(), 14);
        assert_eq!(cache.plan(), &full.plan);
    }

    #[test]
    fn cache_entries_are_append_only() {
        let (cfg, part) = setup();
        let case = random_case::<f64>(
            3,
            &[ModalitySegment::image(1, 2), ModalitySegment::text(2)],
            1,
            cfg,
            part,
            true,
        );
        let mut cache = KvCache::prefill(&case).unwrap();
        let snapshot: Vec<Vec<u64>> = cache
            .rotated_keys()
            .iter()
            .map(|t| t[0].iter().map(|x| x.to_bits()).collect())
            .collect();

        let mut rng = DetRng::new(4);
        for _ in 0..5 {
            let q = vec![rng.normal_vec(12, 1.0)];
            let k = vec![rng.normal_vec(12, 1.0)];
            let v = vec![rng.normal_vec(12, 1.0)];
            decode_step(&mut cache, &q, &k, &v, Modality::Text).unwrap();
        }
        for (t, bits) in snapshot.iter().enumerate() {
            let now: Vec<u64> = cache.rotated_keys()[t][0]
                .iter()
                .map(|x| x.to_bits())
                .collect();
            assert_eq!(&now, bits, "key {t} changed");
        }
    }

    #[test]
    fn first_text_token_over_image_prefix_attends_both_kernels() {
        // The fresh text token's intra row holds exactly itself (self pairs
        // are same-modality); every image key lands in the inter kernel.
        let (cfg, part) = setup();
        let case = random_case::<f64>(11, &[ModalitySegment::image(2, 2)], 1, cfg, part, true);
        let mut cache = KvCache::prefill(&case).unwrap();
        let mut rng = DetRng::new(12);
        let q = vec![rng.normal_vec(12, 1.0)];
        let k = vec![rng.normal_vec(12, 1.0)];
        let v = vec![rng.normal_vec(12, 1.0)];
        let out = decode_step(&mut cache, &q, &k, &v, Modality::Text).unwrap();

        // Against a single intra key the intra kernel returns that key's
        // value; verify through the masks of the extended plan.
        let masks = crate::attention::build_masks(cache.plan(), true);
        let row = 4;
        assert_eq!(masks.intra[row], vec![false, false, false, false, true]);
        assert_eq!(masks.inter[row], vec![true, true, true, true, false]);
        assert_eq!(out[0].len(), 12);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let (cfg, part) = setup();
        let case = random_case::<f64>(2, &[ModalitySegment::text(2)], 2, cfg, part, true);
        let mut cache = KvCache::prefill(&case).unwrap();
        let q = vec![vec![0.0; 12]];
        let err = decode_step(&mut cache, &q, &q, &q, Modality::Text).unwrap_err();
        assert_eq!(err.code(), "plan_mismatch");
        let q = vec![vec![0.0; 12], vec![0.0; 11]];
        let err = decode_step(&mut cache, &q, &q, &q, Modality::Text).unwrap_err();
        assert_eq!(err.code(), "dim_mismatch");
    }
}
