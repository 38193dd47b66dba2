//! Dense attention with modality-split kernels and exact LogSumExp merge.
//!
//! Every query owns two rotated views: a sequential view used against keys of
//! its own modality and an anchored view used against keys of the other
//! modality. [`attend_reference`] is the oracle — one global softmax per
//! (query, head) over mode-dependent logits. [`attend_split`] runs the same
//! interaction set as two masked kernels, one per modality relation, and
//! merges their outputs through the per-row LogSumExp statistic:
//!
//! ```text
//! O = sigmoid(l_intra - l_inter) * O_intra + sigmoid(l_inter - l_intra) * O_inter
//! ```
//!
//! The merge reconstructs the global softmax exactly because each kernel's
//! exponentiated logit sum is `e^l`, and the split does not change the total
//! number of scored pairs: the intra and inter masks partition the causal (or
//! full) mask.
//!
//! Everything is plain dense CPU arithmetic with a documented reduction
//! order (ascending key index), so results are bitwise reproducible.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrope::{ChunkPartition, MropeRotator};
use crate::plan::{Modality, PositionPlan};
use crate::real;
use crate::rope::RopeConfig;

/// `token x head x head_dim` activations.
pub type TokenArray<T> = Vec<Vec<Vec<T>>>;

/// Whether patches of one image attend to later patches of the same image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntraImageMask {
    /// Strictly causal everywhere.
    #[default]
    Causal,
    /// Bidirectional inside each visual segment, causal elsewhere.
    Full,
}

/// Query-side position handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttendMode {
    /// Sequential query rotation against every key.
    Baseline,
    /// Sequential rotation for same-modality keys, anchored rotation for
    /// cross-modality keys.
    Dipe,
}

/// Projected activations plus the positional plan they were produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCase<T> {
    pub queries: TokenArray<T>,
    pub keys: TokenArray<T>,
    pub values: TokenArray<T>,
    pub plan: PositionPlan,
    pub config: RopeConfig,
    pub partition: ChunkPartition,
    pub causal: bool,
    #[serde(default)]
    pub intra_image: IntraImageMask,
}

impl<T: Float> AttentionCase<T> {
    pub fn n_tokens(&self) -> usize {
        self.queries.len()
    }

    pub fn n_heads(&self) -> usize {
        self.queries.first().map_or(0, |t| t.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.check(&self.config)?;
        let n = self.plan.len();
        for (name, arr) in [
            ("queries", &self.queries),
            ("keys", &self.keys),
            ("values", &self.values),
        ] {
            if arr.len() != n {
                return Err(Error::PlanMismatch {
                    detail: format!("{name} cover {} tokens but the plan has {n}", arr.len()),
                });
            }
            for token in arr.iter() {
                if token.len() != self.n_heads() {
                    return Err(Error::PlanMismatch {
                        detail: format!("{name} carry inconsistent head counts"),
                    });
                }
                for head in token.iter() {
                    if head.len() != self.config.head_dim {
                        return Err(Error::DimMismatch {
                            expected: self.config.head_dim,
                            got: head.len(),
                        });
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(())
    }

    /// Re-express the case at another working precision.
    pub fn cast<U: Float>(&self) -> AttentionCase<U> {
        let conv = |arr: &TokenArray<T>| -> TokenArray<U> {
            arr.iter()
                .map(|t| {
                    t.iter()
                        .map(|h| h.iter().map(|x| real::<U>(x.to_f64().unwrap())).collect())
                        .collect()
                })
                .collect()
        };
        AttentionCase {
            queries: conv(&self.queries),
            keys: conv(&self.keys),
            values: conv(&self.values),
            plan: self.plan.clone(),
            config: self.config,
            partition: self.partition,
            causal: self.causal,
            intra_image: self.intra_image,
        }
    }
}

impl AttentionCase<f64> {
    /// Canonical wire format: f64 arrays of numbers. Other precisions are
    /// reached through [`AttentionCase::cast`].
    pub fn from_json(input: &str) -> Result<Self> {
        crate::plan::parse_json(input)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("case serializes")
    }
}

/// Boolean interaction masks split by modality relation. `true` = attend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub intra: Vec<Vec<bool>>,
    pub inter: Vec<Vec<bool>>,
}

/// Which (query, key) pairs may interact, before splitting by modality.
#[derive(Debug, Clone)]
pub(crate) struct MaskRule {
    causal: bool,
    intra_image: IntraImageMask,
    modality: Vec<Modality>,
    segment: Vec<usize>,
}

impl MaskRule {
    pub(crate) fn new(plan: &PositionPlan, causal: bool, intra_image: IntraImageMask) -> Self {
        let mut segment = vec![0usize; plan.len()];
        for (idx, span) in plan.segments.iter().enumerate() {
            for s in segment.iter_mut().take(span.end).skip(span.start) {
                *s = idx;
            }
        }
        Self {
            causal,
            intra_image,
            modality: plan.modality.clone(),
            segment,
        }
    }

    pub(crate) fn same_modality(&self, i: usize, j: usize) -> bool {
        self.modality[i] == self.modality[j]
    }

    pub(crate) fn allowed(&self, i: usize, j: usize) -> bool {
        if !self.causal || j <= i {
            return true;
        }
        self.intra_image == IntraImageMask::Full
            && self.modality[i] == Modality::Visual
            && self.segment[i] == self.segment[j]
    }

    /// Exclusive upper bound on keys token `i` can reach; `allowed` must
    /// still be checked inside the range.
    pub(crate) fn key_upper(&self, i: usize, n: usize) -> usize {
        if !self.causal {
            return n;
        }
        if self.intra_image == IntraImageMask::Full && self.modality[i] == Modality::Visual {
            // The rest of this token's image lies ahead of it.
            let seg = self.segment[i];
            let mut end = i + 1;
            while end < n && self.segment[end] == seg {
                end += 1;
            }
            return end;
        }
        i + 1
    }
}

/// Split the permitted interactions of a plan into same-modality and
/// cross-modality masks. The two are disjoint and their union is exactly the
/// causal (or full) mask.
pub fn build_masks(plan: &PositionPlan, causal: bool) -> MaskPair {
    build_masks_with(plan, causal, IntraImageMask::Causal)
}

pub fn build_masks_with(
    plan: &PositionPlan,
    causal: bool,
    intra_image: IntraImageMask,
) -> MaskPair {
    let n = plan.len();
    let rule = MaskRule::new(plan, causal, intra_image);
    let mut intra = vec![vec![false; n]; n];
    let mut inter = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if rule.allowed(i, j) {
                if rule.same_modality(i, j) {
                    intra[i][j] = true;
                } else {
                    inter[i][j] = true;
                }
            }
        }
    }
    MaskPair { intra, inter }
}

/// Attention output plus the per-(query, head) LogSumExp of the scaled
/// logits over permitted keys; `-inf` where a row permits no key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResult<T> {
    pub output: TokenArray<T>,
    pub lse: Vec<Vec<T>>,
}

/// Split execution artifacts: both kernels, their merge, and the merge
/// weight `alpha = sigmoid(l_intra - l_inter)` per (query, head).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAttention<T> {
    pub merged: AttentionResult<T>,
    pub intra: AttentionResult<T>,
    pub inter: AttentionResult<T>,
    pub alpha: Vec<Vec<T>>,
}

/// Rotated query/key views shared by the oracle, the split kernels and the
/// probe metrics.
pub struct RotatedCase<T> {
    pub q_spe: TokenArray<T>,
    pub q_ape: TokenArray<T>,
    pub keys: TokenArray<T>,
    rule: MaskRule,
    scale: T,
}

impl<T: Float> RotatedCase<T> {
    pub fn new(case: &AttentionCase<T>) -> Result<Self> {
        case.validate()?;
        let rotator = MropeRotator::new(&case.config, &case.partition)?;
        let rotate_all = |src: &TokenArray<T>, tuple_of: &dyn Fn(usize) -> [u32; 3]| {
            src.iter()
                .enumerate()
                .map(|(i, heads)| {
                    let [t, h, w] = tuple_of(i);
                    heads
                        .iter()
                        .map(|vec| {
                            let mut out = vec.clone();
                            rotator.rotate_in_place(&mut out, t as f64, h as f64, w as f64);
                            out
                        })
                        .collect()
                })
                .collect()
        };
        let plan = &case.plan;
        let q_spe = rotate_all(&case.queries, &|i| plan.spe[i].into());
        let q_ape = rotate_all(&case.queries, &|i| plan.ape[i].into());
        let keys = rotate_all(&case.keys, &|i| plan.spe[i].into());
        Ok(Self {
            q_spe,
            q_ape,
            keys,
            rule: MaskRule::new(plan, case.causal, case.intra_image),
            scale: real::<T>(1.0 / (case.config.head_dim as f64).sqrt()),
        })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Scaled logit between query `i` and key `j` on head `h` under `mode`,
    /// independent of any mask.
    pub fn logit(&self, mode: AttendMode, i: usize, j: usize, h: usize) -> T {
        let q = match (mode, self.rule.same_modality(i, j)) {
            (AttendMode::Baseline, _) | (AttendMode::Dipe, true) => &self.q_spe,
            (AttendMode::Dipe, false) => &self.q_ape,
        };
        dot(&q[i][h], &self.keys[j][h]) * self.scale
    }
}

pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc
}

/// Numerically stable masked softmax of one logit row.
///
/// Returns the normalized weights (zero where masked) and the LogSumExp of
/// the unmasked logits; an all-masked row yields zero weights and `-inf`.
pub fn softmax_with_lse<T: Float>(logits: &[T], mask: &[bool]) -> (Vec<T>, T) {
    let mut weights = vec![T::zero(); logits.len()];
    let lse = softmax_into(logits, mask, &mut weights);
    (weights, lse)
}

fn softmax_into<T: Float>(logits: &[T], mask: &[bool], weights: &mut [T]) -> T {
    let mut max = T::neg_infinity();
    let mut any = false;
    for (j, &on) in mask.iter().enumerate() {
        if on {
            any = true;
            if logits[j] > max {
                max = logits[j];
            }
        }
    }
    if !any {
        for w in weights.iter_mut() {
            *w = T::zero();
        }
        return T::neg_infinity();
    }
    let mut sum = T::zero();
    for (j, &on) in mask.iter().enumerate() {
        if on {
            let e = (logits[j] - max).exp();
            weights[j] = e;
            sum = sum + e;
        } else {
            weights[j] = T::zero();
        }
    }
    let inv = T::one() / sum;
    for w in weights.iter_mut() {
        *w = *w * inv;
    }
    max + sum.ln()
}

fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Fuse two kernel outputs through their LogSumExp statistics.
///
/// `sigmoid(l1 - l2)` recovers `e^l1 / (e^l1 + e^l2)` without exponentiating
/// either statistic directly, and the sigmoid limits make an empty kernel
/// (`l = -inf`) select the other side exactly. When both kernels are empty
/// the output is zero with `lse = -inf` (alpha is reported as 0.5; nothing
/// consumes it in that case).
pub fn merge_lse<T: Float>(o1: &[T], l1: T, o2: &[T], l2: T) -> (Vec<T>, T, T) {
    debug_assert_eq!(o1.len(), o2.len());
    if l1 == T::neg_infinity() && l2 == T::neg_infinity() {
        return (vec![T::zero(); o1.len()], T::neg_infinity(), real::<T>(0.5));
    }
    let alpha = sigmoid(l1 - l2);
    let beta = T::one() - alpha;
    let out = o1
        .iter()
        .zip(o2.iter())
        .map(|(a, b)| alpha * *a + beta * *b)
        .collect();
    let max = l1.max(l2);
    let lse = max + ((l1 - max).exp() + (l2 - max).exp()).ln();
    (out, lse, alpha)
}

/// One masked key sweep for a single (query, head) pair.
///
/// Keys are reduced in ascending index order; this is the only reduction
/// order used anywhere, which keeps incremental decoding bitwise equal to
/// batch execution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn masked_row_attention<T: Float>(
    q: &[T],
    keys: &TokenArray<T>,
    values: &TokenArray<T>,
    head: usize,
    j_upper: usize,
    select: impl Fn(usize) -> bool,
    scale: T,
    scratch: &mut Vec<(u32, T)>,
) -> (Vec<T>, T) {
    scratch.clear();
    let mut max = T::neg_infinity();
    for (j, key) in keys.iter().enumerate().take(j_upper) {
        if select(j) {
            let s = dot(q, &key[head]) * scale;
            if s > max {
                max = s;
            }
            scratch.push((j as u32, s));
        }
    }
    let dim = q.len();
    let mut out = vec![T::zero(); dim];
    if scratch.is_empty() {
        return (out, T::neg_infinity());
    }
    let mut sum = T::zero();
    for &(j, s) in scratch.iter() {
        let e = (s - max).exp();
        sum = sum + e;
        let v = &values[j as usize][head];
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = *o + e * *x;
        }
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o = *o * inv;
    }
    (out, max + sum.ln())
}

/// Dense oracle: one global softmax per (query, head) over all permitted
/// keys, with the query view chosen per key under [`AttendMode::Dipe`].
pub fn attend_reference<T: Float>(
    case: &AttentionCase<T>,
    mode: AttendMode,
) -> Result<AttentionResult<T>> {
    let rot = RotatedCase::new(case)?;
    let n = case.n_tokens();
    let heads = case.n_heads();
    let dim = case.config.head_dim;

    let mut output = vec![vec![Vec::new(); heads]; n];
    let mut lse = vec![vec![T::neg_infinity(); heads]; n];
    let mut logits = vec![T::zero(); n];
    let mut mask = vec![false; n];
    let mut weights = vec![T::zero(); n];

    for i in 0..n {
        let upper = rot.rule.key_upper(i, n);
        for h in 0..heads {
            for j in 0..n {
                let on = j < upper && rot.rule.allowed(i, j);
                mask[j] = on;
                logits[j] = if on {
                    rot.logit(mode, i, j, h)
                } else {
                    T::zero()
                };
            }
            let l = softmax_into(&logits, &mask, &mut weights);
            let mut out = vec![T::zero(); dim];
            for j in 0..upper {
                if mask[j] {
                    let w = weights[j];
                    for (o, x) in out.iter_mut().zip(case.values[j][h].iter()) {
                        *o = *o + w * *x;
                    }
                }
            }
            output[i][h] = out;
            lse[i][h] = l;
        }
    }
    Ok(AttentionResult { output, lse })
}

/// Split execution: a sequential-query kernel over same-modality keys and an
/// anchored-query kernel over cross-modality keys, merged via [`merge_lse`].
pub fn attend_split<T: Float>(case: &AttentionCase<T>) -> Result<AttentionResult<T>> {
    Ok(attend_split_detailed(case)?.merged)
}

#[allow(clippy::needless_range_loop)]
pub fn attend_split_detailed<T: Float>(case: &AttentionCase<T>) -> Result<SplitAttention<T>> {
    let rot = RotatedCase::new(case)?;
    let n = case.n_tokens();
    let heads = case.n_heads();

    let empty = || AttentionResult {
        output: vec![vec![Vec::new(); heads]; n],
        lse: vec![vec![T::neg_infinity(); heads]; n],
    };
    let mut intra = empty();
    let mut inter = empty();
    let mut merged = empty();
    let mut alpha = vec![vec![T::zero(); heads]; n];
    let mut scratch: Vec<(u32, T)> = Vec::new();

    for i in 0..n {
        let upper = rot.rule.key_upper(i, n);
        for h in 0..heads {
            let (o1, l1) = masked_row_attention(
                &rot.q_spe[i][h],
                &rot.keys,
                &case.values,
                h,
                upper,
                |j| rot.rule.allowed(i, j) && rot.rule.same_modality(i, j),
                rot.scale,
                &mut scratch,
            );
            let (o2, l2) = masked_row_attention(
                &rot.q_ape[i][h],
                &rot.keys,
                &case.values,
                h,
                upper,
                |j| rot.rule.allowed(i, j) && !rot.rule.same_modality(i, j),
                rot.scale,
                &mut scratch,
            );
            let (o, l, a) = merge_lse(&o1, l1, &o2, l2);
            intra.output[i][h] = o1;
            intra.lse[i][h] = l1;
            inter.output[i][h] = o2;
            inter.lse[i][h] = l2;
            merged.output[i][h] = o;
            merged.lse[i][h] = l;
            alpha[i][h] = a;
        }
    }
    Ok(SplitAttention {
        merged,
        intra,
        inter,
        alpha,
    })
}
