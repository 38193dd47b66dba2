//! Runtime self-checks behind `dipe verify`.
//!
//! Each check exercises one contract of the crate at a configurable size and
//! reports pass/fail with a one-line detail. The acceptance test suite calls
//! the same functions with its pinned sizes and tolerances.

use crate::attention::{
    attend_reference, attend_split, attend_split_detailed, build_masks, AttendMode, RotatedCase,
};
use crate::cache::{decode_step, KvCache};
use crate::cases::{distractor_family_case, random_case, random_layout, random_plan};
use crate::mrope::{ChunkPartition, PositionTuple};
use crate::plan::{build_plan, IndexMode, Modality, ModalitySegment};
use crate::probe::{first_layer_inter_logits, ProbeConfig, ProbeMode};
use crate::rng::DetRng;
use crate::rope::{decay_bound, rotate, RopeConfig};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// Rotated dot products depend only on the relative offset.
pub fn check_rotation_identity(
    seed: u64,
    samples_per_dim: usize,
    dims: &[usize],
    tol: f64,
) -> CheckOutcome {
    let mut rng = DetRng::stream(seed, 0x01d);
    let mut worst = 0.0f64;
    for &dim in dims {
        let cfg = RopeConfig::new(dim, 10000.0).unwrap();
        for _ in 0..samples_per_dim {
            let q = rng.normal_vec(dim, 1.0);
            let k = rng.normal_vec(dim, 1.0);
            let m = rng.next_below(32_768) as f64;
            let n = rng.next_below(32_768) as f64;
            let lhs: f64 = rotate(&q, m, &cfg)
                .unwrap()
                .iter()
                .zip(rotate(&k, n, &cfg).unwrap())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = q
                .iter()
                .zip(rotate(&k, n - m, &cfg).unwrap())
                .map(|(a, b)| a * b)
                .sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    CheckOutcome::from(
        "rotation_identity",
        worst <= tol,
        format!(
            "{} samples over dims {:?}, max |Attn(q,k) - q^T R_rel k| = {worst:.3e} (tol {tol:.0e})",
            samples_per_dim * dims.len(),
            dims
        ),
    )
}

/// Decay profile: triangular value at distance zero, dominated thereafter.
pub fn check_decay_bound() -> CheckOutcome {
    let cfg = RopeConfig::new(64, 10000.0).unwrap();
    let at_zero = decay_bound(0, &cfg);
    let mut passed = (at_zero - 528.0).abs() <= 528.0 * 1e-9;
    let mut worst_ratio = 0.0f64;
    for d in [256u64, 1024, 4096, 16384] {
        let b = decay_bound(d, &cfg);
        worst_ratio = worst_ratio.max(b / at_zero);
        passed &= b < at_zero;
    }
    let small = decay_bound(0, &RopeConfig::new(4, 10000.0).unwrap());
    passed &= (small - 3.0).abs() <= 1e-9;
    CheckOutcome::from(
        "decay_bound",
        passed,
        format!(
            "bound(0) = {at_zero:.9} (want 528), later distances peak at {:.3}% of it",
            worst_ratio * 100.0
        ),
    )
}

/// Frozen hand-derived plan for [text 3, image 2x2, text 2].
pub fn check_plan_example() -> CheckOutcome {
    let plan = match build_plan(
        &[
            ModalitySegment::text(3),
            ModalitySegment::image(2, 2),
            ModalitySegment::text(2),
        ],
        IndexMode::Mrope,
    ) {
        Ok(p) => p,
        Err(e) => return CheckOutcome::from("plan_example", false, e.to_string()),
    };
    let spe: Vec<[u32; 3]> = plan.spe.iter().map(|p| (*p).into()).collect();
    let ape: Vec<[u32; 3]> = plan.ape.iter().map(|p| (*p).into()).collect();
    let want_spe = [
        [0, 0, 0],
        [1, 1, 1],
        [2, 2, 2],
        [3, 3, 3],
        [3, 3, 4],
        [3, 4, 3],
        [3, 4, 4],
        [5, 5, 5],
        [6, 6, 6],
    ];
    let want_ape = [
        [0, 0, 0],
        [0, 0, 0],
        [0, 0, 0],
        [3, 3, 3],
        [3, 3, 3],
        [3, 3, 3],
        [3, 3, 3],
        [5, 5, 5],
        [5, 5, 5],
    ];
    let passed = spe == want_spe && ape == want_ape;
    CheckOutcome::from(
        "plan_example",
        passed,
        "9-token dual plan matches the hand derivation".into(),
    )
}

/// Intra and inter masks partition the permitted mask exactly.
pub fn check_mask_partition(seed: u64, plans: usize) -> CheckOutcome {
    let mut rng = DetRng::stream(seed, 0x3a5c);
    let mut checked_pairs = 0usize;
    for _ in 0..plans {
        let plan = random_plan(&mut rng, 96);
        let masks = build_masks(&plan, true);
        let n = plan.len();
        let mut intra = 0usize;
        let mut inter = 0usize;
        for i in 0..n {
            for j in 0..n {
                if masks.intra[i][j] && masks.inter[i][j] {
                    return CheckOutcome::from(
                        "mask_partition",
                        false,
                        format!("masks overlap at ({i}, {j})"),
                    );
                }
                if masks.intra[i][j] {
                    intra += 1;
                }
                if masks.inter[i][j] {
                    inter += 1;
                }
                if (masks.intra[i][j] || masks.inter[i][j]) != (j <= i) {
                    return CheckOutcome::from(
                        "mask_partition",
                        false,
                        format!("union mismatches the causal mask at ({i}, {j})"),
                    );
                }
            }
        }
        let causal = n * (n + 1) / 2;
        if intra + inter != causal {
            return CheckOutcome::from(
                "mask_partition",
                false,
                format!(
                    "|intra| + |inter| = {} but causal mask has {causal}",
                    intra + inter
                ),
            );
        }
        checked_pairs += causal;
    }
    CheckOutcome::from(
        "mask_partition",
        true,
        format!("{plans} random plans, {checked_pairs} causal pairs partitioned exactly"),
    )
}

/// Split kernels merged through LogSumExp equal the dense oracle.
pub fn check_merge_exactness(
    seed: u64,
    cases: usize,
    max_tokens: usize,
    heads: usize,
    head_dim: usize,
    tol: f64,
) -> CheckOutcome {
    let cfg = RopeConfig::new(head_dim, 10000.0).unwrap();
    let part = ChunkPartition::equal_thirds(&cfg).unwrap();
    let mut layout_rng = DetRng::stream(seed, 0x6e6);
    let mut worst = 0.0f64;
    let mut empty_inter_rows = 0usize;
    for c in 0..cases {
        let layout = random_layout(&mut layout_rng, max_tokens);
        let causal = layout_rng.next_below(4) != 0;
        let case = random_case::<f64>(seed ^ (c as u64), &layout, heads, cfg, part, causal);
        let oracle = match attend_reference(&case, AttendMode::Dipe) {
            Ok(r) => r,
            Err(e) => return CheckOutcome::from("merge_exactness", false, e.to_string()),
        };
        let split = match attend_split_detailed(&case) {
            Ok(r) => r,
            Err(e) => return CheckOutcome::from("merge_exactness", false, e.to_string()),
        };
        for i in 0..case.n_tokens() {
            for h in 0..heads {
                if split.inter.lse[i][h] == f64::NEG_INFINITY
                    || split.intra.lse[i][h] == f64::NEG_INFINITY
                {
                    empty_inter_rows += 1;
                }
                worst = worst.max((oracle.lse[i][h] - split.merged.lse[i][h]).abs());
                for (a, b) in oracle.output[i][h]
                    .iter()
                    .zip(split.merged.output[i][h].iter())
                {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let passed = worst <= tol && empty_inter_rows > 0;
    CheckOutcome::from(
        "merge_exactness",
        passed,
        format!(
            "{cases} cases (<= {max_tokens} tokens, {heads} heads, d={head_dim}): max |split - oracle| = {worst:.3e} (tol {tol:.0e}), {empty_inter_rows} empty-kernel rows exercised"
        ),
    )
}

/// Same-modality logits are bitwise identical with and without anchoring.
pub fn check_intra_parity(seed: u64, cases: usize) -> CheckOutcome {
    let cfg = RopeConfig::new(48, 10000.0).unwrap();
    let part = ChunkPartition::equal_thirds(&cfg).unwrap();
    let mut layout_rng = DetRng::stream(seed, 0x9a7);
    let mut pairs = 0usize;
    for c in 0..cases {
        let layout = random_layout(&mut layout_rng, 64);
        let case = random_case::<f64>(seed ^ (0x517 + c as u64), &layout, 2, cfg, part, true);
        let rot = match RotatedCase::new(&case) {
            Ok(r) => r,
            Err(e) => return CheckOutcome::from("intra_modal_parity", false, e.to_string()),
        };
        let n = case.n_tokens();
        for i in 0..n {
            for j in 0..n {
                if case.plan.modality[i] != case.plan.modality[j] {
                    continue;
                }
                for h in 0..case.n_heads() {
                    let a = rot.logit(AttendMode::Dipe, i, j, h);
                    let b = rot.logit(AttendMode::Baseline, i, j, h);
                    if a.to_bits() != b.to_bits() {
                        return CheckOutcome::from(
                            "intra_modal_parity",
                            false,
                            format!("logit ({i},{j},{h}) differs between modes: {a} vs {b}"),
                        );
                    }
                    pairs += 1;
                }
            }
        }
    }
    CheckOutcome::from(
        "intra_modal_parity",
        true,
        format!("{pairs} same-modality logits bitwise equal across modes ({cases} cases)"),
    )
}

/// Question-to-visual logits: pinned under anchoring, moving without it.
pub fn check_inter_invariance(
    seed: u64,
    lengths: &[usize],
    anchor_tol: f64,
    min_baseline_gap: f64,
) -> CheckOutcome {
    let cfg = RopeConfig::new(48, 10000.0).unwrap();
    let part = ChunkPartition::equal_thirds(&cfg).unwrap();
    let heads = 2;
    let question_len = 8;
    let grid = (4, 4);
    let n_visual = grid.0 * grid.1;

    let logits = |len: usize, mode: AttendMode| -> crate::Result<Vec<f64>> {
        let case = distractor_family_case::<f64>(seed, grid, question_len, len, heads, cfg, part);
        let rot = RotatedCase::new(&case)?;
        let n = case.n_tokens();
        let mut out = Vec::with_capacity(question_len * heads * n_visual);
        for i in n - question_len..n {
            for h in 0..heads {
                for j in 0..n_visual {
                    out.push(rot.logit(mode, i, j, h));
                }
            }
        }
        Ok(out)
    };

    let run = || -> crate::Result<(f64, f64)> {
        let dipe_base = logits(lengths[0], AttendMode::Dipe)?;
        let mut dipe_worst = 0.0f64;
        for &len in &lengths[1..] {
            let other = logits(len, AttendMode::Dipe)?;
            for (a, b) in dipe_base.iter().zip(other.iter()) {
                dipe_worst = dipe_worst.max((a - b).abs());
            }
        }
        let base_first = logits(lengths[0], AttendMode::Baseline)?;
        let base_last = logits(*lengths.last().unwrap(), AttendMode::Baseline)?;
        let baseline_gap = base_first
            .iter()
            .zip(base_last.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Ok((dipe_worst, baseline_gap))
    };
    match run() {
        Ok((dipe_worst, baseline_gap)) => CheckOutcome::from(
            "inter_modal_invariance",
            dipe_worst <= anchor_tol && baseline_gap > min_baseline_gap,
            format!(
                "anchored logits move {dipe_worst:.3e} over lengths {lengths:?} (tol {anchor_tol:.0e}); sequential logits move {baseline_gap:.3e} (must exceed {min_baseline_gap:.0e})"
            ),
        ),
        Err(e) => CheckOutcome::from("inter_modal_invariance", false, e.to_string()),
    }
}

/// Step-by-step decoding equals the matching rows of one batch pass and
/// never rewrites cached keys.
pub fn check_incremental_decode(seed: u64, decode_tokens: usize, tol: f64) -> CheckOutcome {
    let cfg = RopeConfig::new(48, 10000.0).unwrap();
    let part = ChunkPartition::equal_thirds(&cfg).unwrap();
    let heads = 2;
    let prefix_text = 4;
    let prefix = 4 + prefix_text; // image 2x2 + text

    let full = random_case::<f64>(
        seed ^ 0xdec0de,
        &[
            ModalitySegment::image(2, 2),
            ModalitySegment::text(prefix_text + decode_tokens),
        ],
        heads,
        cfg,
        part,
        true,
    );
    let run = || -> crate::Result<(f64, bool)> {
        let batch = attend_split(&full)?;
        let prefix_plan = build_plan(
            &[
                ModalitySegment::image(2, 2),
                ModalitySegment::text(prefix_text),
            ],
            IndexMode::Mrope,
        )?;
        let prefix_case = crate::attention::AttentionCase {
            queries: full.queries[..prefix].to_vec(),
            keys: full.keys[..prefix].to_vec(),
            values: full.values[..prefix].to_vec(),
            plan: prefix_plan,
            config: full.config,
            partition: full.partition,
            causal: true,
            intra_image: full.intra_image,
        };
        let mut cache = KvCache::prefill(&prefix_case)?;
        let mut worst = 0.0f64;
        let mut keys_stable = true;
        for t in prefix..prefix + decode_tokens {
            let snapshot: Vec<u64> = cache
                .rotated_keys()
                .iter()
                .flatten()
                .flatten()
                .map(|x| x.to_bits())
                .collect();
            let out = decode_step(
                &mut cache,
                &full.queries[t],
                &full.keys[t],
                &full.values[t],
                Modality::Text,
            )?;
            let after: Vec<u64> = cache.rotated_keys()[..t]
                .iter()
                .flatten()
                .flatten()
                .map(|x| x.to_bits())
                .collect();
            keys_stable &= snapshot == after;
            for (out_row, batch_row) in out.iter().zip(batch.output[t].iter()) {
                for (a, b) in out_row.iter().zip(batch_row.iter()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok((worst, keys_stable))
    };
    match run() {
        Ok((worst, keys_stable)) => CheckOutcome::from(
            "incremental_decode",
            worst <= tol && keys_stable,
            format!(
                "{decode_tokens} decoded tokens: max |step - batch| = {worst:.3e} (tol {tol:.0e}), cached key bytes {}",
                if keys_stable { "untouched" } else { "MODIFIED" }
            ),
        ),
        Err(e) => CheckOutcome::from("incremental_decode", false, e.to_string()),
    }
}

/// First-layer probe logits: anchored mode invariant, sequential modes not.
pub fn check_probe_invariance(seed: u64) -> CheckOutcome {
    let cfg = ProbeConfig {
        seed,
        layers: 1,
        heads: 2,
        head_dim: 48,
        image_grid: (2, 2),
        question_len: 4,
        distractor_lengths: vec![0, 32, 128],
        modes: vec![ProbeMode::Mrope, ProbeMode::Dipe],
        ..ProbeConfig::default()
    };
    let run = || -> crate::Result<(f64, f64)> {
        let dipe_base = first_layer_inter_logits(&cfg, ProbeMode::Dipe, 0)?;
        let mut dipe_worst = 0.0f64;
        for len in [32, 128] {
            let other = first_layer_inter_logits(&cfg, ProbeMode::Dipe, len)?;
            for (a, b) in dipe_base.iter().zip(other.iter()) {
                dipe_worst = dipe_worst.max((a - b).abs());
            }
        }
        let m0 = first_layer_inter_logits(&cfg, ProbeMode::Mrope, 0)?;
        let m128 = first_layer_inter_logits(&cfg, ProbeMode::Mrope, 128)?;
        let gap = m0
            .iter()
            .zip(m128.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Ok((dipe_worst, gap))
    };
    match run() {
        Ok((dipe_worst, gap)) => CheckOutcome::from(
            "probe_logit_invariance",
            dipe_worst <= 1e-9 && gap > 1e-3,
            format!(
                "first-layer anchored logits move {dipe_worst:.3e}; sequential logits move {gap:.3e}"
            ),
        ),
        Err(e) => CheckOutcome::from("probe_logit_invariance", false, e.to_string()),
    }
}

/// Composition of scalar rotations under chunked tuples.
pub fn check_mrope_relative_identity(seed: u64, samples: usize) -> CheckOutcome {
    let cfg = RopeConfig::new(48, 10000.0).unwrap();
    let part = ChunkPartition::equal_thirds(&cfg).unwrap();
    let rot = crate::mrope::MropeRotator::new(&cfg, &part).unwrap();
    let mut rng = DetRng::stream(seed, 0x317);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let q = rng.normal_vec(48, 1.0);
        let k = rng.normal_vec(48, 1.0);
        let m = PositionTuple::new(
            rng.next_below(4096) as u32,
            rng.next_below(4096) as u32,
            rng.next_below(4096) as u32,
        );
        let n = PositionTuple::new(
            rng.next_below(4096) as u32,
            rng.next_below(4096) as u32,
            rng.next_below(4096) as u32,
        );
        let lhs: f64 = rot
            .rotate(&q, &m)
            .unwrap()
            .iter()
            .zip(rot.rotate(&k, &n).unwrap())
            .map(|(a, b)| a * b)
            .sum();
        let rel = rot
            .rotate_at(
                &k,
                n.t as f64 - m.t as f64,
                n.h as f64 - m.h as f64,
                n.w as f64 - m.w as f64,
            )
            .unwrap();
        let rhs: f64 = q.iter().zip(rel).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    CheckOutcome::from(
        "mrope_relative_identity",
        worst <= 1e-9,
        format!("{samples} samples, max relative-offset residual = {worst:.3e}"),
    )
}

/// Run every check at its default size.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_rotation_identity(seed, 250, &[2, 4, 48, 64], 1e-9),
        check_decay_bound(),
        check_plan_example(),
        check_mrope_relative_identity(seed, 200),
        check_mask_partition(seed, 50),
        check_merge_exactness(seed, 12, 128, 2, 48, 1e-9),
        check_intra_parity(seed, 8),
        check_inter_invariance(seed, &[0, 64, 256, 1024], 1e-12, 1e-3),
        check_incremental_decode(seed, 32, 1e-9),
        check_probe_invariance(seed),
    ]
}
