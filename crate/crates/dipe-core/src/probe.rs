//! Synthetic probe for attention mass on visual tokens.
//!
//! The probe builds sequences of the shape `[image, distractor text,
//! question]`, sweeps the distractor length, and measures how much attention
//! the question tokens pay to the image under three position regimes: flat
//! sequential indices (`vanilla`), grid-aware sequential indices (`mrope`),
//! and grid-aware indices with anchored cross-modal queries (`dipe`).
//!
//! No training is involved. Question embeddings are drawn correlated with
//! visual content (each question token is a noisy copy of one image patch)
//! and queries and keys share one projection per layer, so an aligned
//! question/patch pair produces a coherent logit whose only enemy is
//! positional phase decoherence — exactly the mechanism under study.
//! Distractor tokens are independent noise. Under the sequential regimes the
//! question drifts away from the image as the distractor grows and the
//! aligned logits decay; under the anchored regime the cross-modal offsets
//! are pinned, so the first-layer question-to-image logits are identical for
//! every distractor length. Attention mass may still dilute with length
//! (more keys compete in the softmax); the probe reports it rather than
//! hiding it.
//!
//! Layers are attention plus residual only — no MLP, no normalization — so
//! every effect in the report is attributable to attention. Metrics are
//! recorded per layer; from the second layer on, hidden states mix distractor
//! content and the strict invariance statement applies to the first layer.
//!
//! Everything is deterministic in the seed, and each (mode, length) cell is
//! independent, so results are byte-identical regardless of thread count.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attend_reference, attend_split, AttendMode, AttentionCase, AttentionResult, IntraImageMask,
    RotatedCase, TokenArray,
};
use crate::error::{Error, Result};
use crate::mrope::ChunkPartition;
use crate::plan::{build_plan, IndexMode, ModalitySegment, PositionPlan};
use crate::real;
use crate::rng::DetRng;
use crate::rope::RopeConfig;

/// Correlation between a question token and its target image patch.
const QUESTION_VISUAL_MIX: f64 = 0.5;
/// Frequency base used by the probe's rotary configuration.
const PROBE_BASE: f64 = 10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Vanilla,
    Mrope,
    Dipe,
}

impl ProbeMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Mrope => "mrope",
            Self::Dipe => "dipe",
        }
    }

    fn index_mode(&self) -> IndexMode {
        match self {
            Self::Vanilla => IndexMode::Vanilla,
            Self::Mrope | Self::Dipe => IndexMode::Mrope,
        }
    }

    fn attend_mode(&self) -> AttendMode {
        match self {
            Self::Dipe => AttendMode::Dipe,
            _ => AttendMode::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub seed: u64,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub image_grid: (usize, usize),
    pub question_len: usize,
    /// Sorted ascending.
    pub distractor_lengths: Vec<usize>,
    pub modes: Vec<ProbeMode>,
    pub intra_image_mask: IntraImageMask,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            layers: 2,
            heads: 2,
            head_dim: 48,
            image_grid: (4, 4),
            question_len: 8,
            distractor_lengths: vec![0, 64, 256, 1024, 4096],
            modes: vec![ProbeMode::Vanilla, ProbeMode::Mrope, ProbeMode::Dipe],
            intra_image_mask: IntraImageMask::Causal,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig {
                detail: "at least one probe mode is required".into(),
            });
        }
        if !self.distractor_lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig {
                detail: "distractor lengths must be sorted strictly ascending".into(),
            });
        }
        if self.distractor_lengths.is_empty() {
            return Err(Error::InvalidConfig {
                detail: "at least one distractor length is required".into(),
            });
        }
        if self.layers == 0 || self.heads == 0 || self.question_len == 0 {
            return Err(Error::InvalidConfig {
                detail: "layers, heads and question_len must be positive".into(),
            });
        }
        if self.image_grid.0 == 0 || self.image_grid.1 == 0 {
            return Err(Error::InvalidConfig {
                detail: "image grid must be at least 1x1".into(),
            });
        }
        let cfg = RopeConfig::new(self.head_dim, PROBE_BASE)?;
        ChunkPartition::equal_thirds(&cfg)?;
        Ok(())
    }

    pub fn n_visual(&self) -> usize {
        self.image_grid.0 * self.image_grid.1
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn rope(&self) -> (RopeConfig, ChunkPartition) {
        let cfg = RopeConfig::new(self.head_dim, PROBE_BASE).expect("validated");
        let part = ChunkPartition::equal_thirds(&cfg).expect("validated");
        (cfg, part)
    }

    fn segments(&self, distractor_len: usize) -> [ModalitySegment; 2] {
        [
            ModalitySegment::image(self.image_grid.0, self.image_grid.1),
            ModalitySegment::text(distractor_len + self.question_len),
        ]
    }
}

/// Metrics for one (mode, distractor length, layer) cell.
///
/// `visual_mass` is the mean over question queries and heads of the total
/// attention weight landing on visual keys; `mean_inter_logit` averages the
/// pre-softmax question-to-visual logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub mode: ProbeMode,
    pub distractor_len: usize,
    pub layer: usize,
    pub visual_mass: f64,
    pub per_visual_token_mass: f64,
    pub mean_inter_logit: f64,
}

/// Cross-layer mean of the per-layer metrics for one (mode, length) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLayerMean {
    pub mode: ProbeMode,
    pub distractor_len: usize,
    pub visual_mass: f64,
    pub per_visual_token_mass: f64,
    pub mean_inter_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub cells: Vec<ProbeCell>,
    pub layer_means: Vec<ProbeLayerMean>,
}

/// Shared token content for every distractor length of one seed.
struct SynthContent {
    visual: Vec<Vec<f64>>,
    question: Vec<Vec<f64>>,
    distractor_pool: Vec<Vec<f64>>,
}

fn synth_content(cfg: &ProbeConfig, max_distractor: usize) -> SynthContent {
    let dim = cfg.model_dim();
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();

    let mut visual_rng = DetRng::stream(cfg.seed, 0x01);
    let visual_units: Vec<Vec<f64>> = (0..cfg.n_visual())
        .map(|_| visual_rng.normal_vec(dim, 1.0))
        .collect();
    let visual = visual_units
        .iter()
        .map(|u| u.iter().map(|x| x * scale).collect())
        .collect();

    // Each question token is a noisy copy of one image patch so the probe
    // has an aligned signal whose fate across distances can be tracked. The
    // marginal distribution stays unit normal before scaling.
    let mut question_rng = DetRng::stream(cfg.seed, 0x02);
    let rho = QUESTION_VISUAL_MIX;
    let question = (0..cfg.question_len)
        .map(|q| {
            let target = &visual_units[q % cfg.n_visual()];
            let noise = question_rng.normal_vec(dim, 1.0);
            target
                .iter()
                .zip(noise.iter())
                .map(|(t, g)| (rho.sqrt() * t + (1.0 - rho).sqrt() * g) * scale)
                .collect()
        })
        .collect();

    let mut distractor_rng = DetRng::stream(cfg.seed, 0x03);
    let distractor_pool = (0..max_distractor)
        .map(|_| distractor_rng.normal_vec(dim, scale))
        .collect();

    SynthContent {
        visual,
        question,
        distractor_pool,
    }
}

fn assemble(content: &SynthContent, distractor_len: usize) -> Vec<Vec<f64>> {
    let mut rows =
        Vec::with_capacity(content.visual.len() + distractor_len + content.question.len());
    rows.extend(content.visual.iter().cloned());
    rows.extend(content.distractor_pool[..distractor_len].iter().cloned());
    rows.extend(content.question.iter().cloned());
    rows
}

/// Token embeddings and the grid-aware plan for one distractor length.
///
/// Image and question rows are identical across lengths and shorter
/// distractor runs are prefixes of longer ones.
pub fn synth_sequence(
    cfg: &ProbeConfig,
    distractor_len: usize,
) -> Result<(Vec<Vec<f64>>, PositionPlan)> {
    cfg.validate()?;
    let content = synth_content(cfg, distractor_len);
    let plan = build_plan(&cfg.segments(distractor_len), IndexMode::Mrope)?;
    Ok((assemble(&content, distractor_len), plan))
}

/// Per-layer projections. Queries and keys share one matrix so aligned
/// content stays aligned after projection; its scale is chosen to give
/// unit-variance logits, the value projection preserves the content scale.
struct Projections {
    wqk: Vec<Vec<Vec<f64>>>,
    wv: Vec<Vec<Vec<f64>>>,
}

fn synth_projections(cfg: &ProbeConfig) -> Projections {
    let dim = cfg.model_dim();
    let qk_scale = (cfg.head_dim as f64 / dim as f64).sqrt();
    let v_scale = (1.0 / dim as f64).sqrt();
    let mut wqk = Vec::with_capacity(cfg.layers);
    let mut wv = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let mut rng = DetRng::stream(cfg.seed, 0x10 + layer as u64);
        wqk.push((0..dim).map(|_| rng.normal_vec(dim, qk_scale)).collect());
        wv.push((0..dim).map(|_| rng.normal_vec(dim, v_scale)).collect());
    }
    Projections { wqk, wv }
}

fn cast_matrix<T: Float>(m: &[Vec<f64>]) -> Vec<Vec<T>> {
    m.iter()
        .map(|row| row.iter().map(|x| real::<T>(*x)).collect())
        .collect()
}

fn matmul<T: Float>(x: &[Vec<T>], w: &[Vec<T>]) -> Vec<Vec<T>> {
    let cols = w[0].len();
    x.iter()
        .map(|row| {
            let mut out = vec![T::zero(); cols];
            for (k, xv) in row.iter().enumerate() {
                let wrow = &w[k];
                for (o, wv) in out.iter_mut().zip(wrow.iter()) {
                    *o = *o + *xv * *wv;
                }
            }
            out
        })
        .collect()
}

fn split_heads<T: Clone>(flat: &[Vec<T>], heads: usize, dim: usize) -> TokenArray<T> {
    flat.iter()
        .map(|row| {
            (0..heads)
                .map(|h| row[h * dim..(h + 1) * dim].to_vec())
                .collect()
        })
        .collect()
}

fn add_heads_into<T: Float>(x: &mut [Vec<T>], out: &AttentionResult<T>, heads: usize, dim: usize) {
    for (row, token) in x.iter_mut().zip(out.output.iter()) {
        for h in 0..heads {
            for (c, v) in token[h].iter().enumerate() {
                row[h * dim + c] = row[h * dim + c] + *v;
            }
        }
    }
}

struct CellTask<'a> {
    mode: ProbeMode,
    distractor_len: usize,
    content: &'a [Vec<f64>],
    plan: &'a PositionPlan,
}

fn run_cell<T: Float>(
    cfg: &ProbeConfig,
    task: &CellTask<'_>,
    wqk: &[Vec<Vec<T>>],
    wv: &[Vec<Vec<T>>],
) -> Result<Vec<ProbeCell>> {
    let (rope, part) = cfg.rope();
    let heads = cfg.heads;
    let dim = cfg.head_dim;
    let n = task.content.len();
    let n_visual = cfg.n_visual();
    let question_rows = n - cfg.question_len..n;
    let attend_mode = task.mode.attend_mode();

    let mut x: Vec<Vec<T>> = task
        .content
        .iter()
        .map(|row| row.iter().map(|v| real::<T>(*v)).collect())
        .collect();

    let mut cells = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let qk = matmul(&x, &wqk[layer]);
        let v = matmul(&x, &wv[layer]);
        let case = AttentionCase {
            queries: split_heads(&qk, heads, dim),
            keys: split_heads(&qk, heads, dim),
            values: split_heads(&v, heads, dim),
            plan: task.plan.clone(),
            config: rope,
            partition: part,
            causal: true,
            intra_image: cfg.intra_image_mask,
        };
        let rotated = RotatedCase::new(&case)?;
        let result = match task.mode {
            ProbeMode::Dipe => attend_split(&case)?,
            _ => attend_reference(&case, AttendMode::Baseline)?,
        };

        let mut mass = 0.0f64;
        let mut logit_sum = 0.0f64;
        for i in question_rows.clone() {
            for h in 0..heads {
                let lse = result.lse[i][h];
                for j in 0..n_visual {
                    let s = rotated.logit(attend_mode, i, j, h);
                    logit_sum += s.to_f64().unwrap();
                    mass += (s - lse).exp().to_f64().unwrap();
                }
            }
        }
        let queries = (cfg.question_len * heads) as f64;
        let visual_mass = mass / queries;
        cells.push(ProbeCell {
            mode: task.mode,
            distractor_len: task.distractor_len,
            layer,
            visual_mass,
            per_visual_token_mass: visual_mass / n_visual as f64,
            mean_inter_logit: logit_sum / (queries * n_visual as f64),
        });

        add_heads_into(&mut x, &result, heads, dim);
    }
    Ok(cells)
}

/// Run the full sweep. Cells are distributed over `threads` workers; the
/// per-cell arithmetic is self-contained and sequential, so the report is
/// byte-identical for any thread count.
pub fn run_probe<T: Float + Send + Sync>(cfg: &ProbeConfig, threads: usize) -> Result<ProbeReport> {
    cfg.validate()?;
    let max_distractor = *cfg.distractor_lengths.last().unwrap();
    let content = synth_content(cfg, max_distractor);
    let projections = synth_projections(cfg);
    let wqk: Vec<Vec<Vec<T>>> = projections.wqk.iter().map(|m| cast_matrix(m)).collect();
    let wv: Vec<Vec<Vec<T>>> = projections.wv.iter().map(|m| cast_matrix(m)).collect();

    let contents: Vec<(usize, Vec<Vec<f64>>)> = cfg
        .distractor_lengths
        .iter()
        .map(|&len| (len, assemble(&content, len)))
        .collect();
    let plans: Vec<Vec<PositionPlan>> = cfg
        .modes
        .iter()
        .map(|mode| {
            cfg.distractor_lengths
                .iter()
                .map(|&len| build_plan(&cfg.segments(len), mode.index_mode()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for (m, mode) in cfg.modes.iter().enumerate() {
        for (l, (len, rows)) in contents.iter().enumerate() {
            tasks.push(CellTask {
                mode: *mode,
                distractor_len: *len,
                content: rows,
                plan: &plans[m][l],
            });
        }
    }

    let workers = threads.max(1).min(tasks.len());
    let mut slots: Vec<Option<Vec<ProbeCell>>> = vec![None; tasks.len()];
    if workers <= 1 {
        for (idx, task) in tasks.iter().enumerate() {
            slots[idx] = Some(run_cell(cfg, task, &wqk, &wv)?);
        }
    } else {
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..workers {
                let tasks = &tasks;
                let wqk = &wqk;
                let wv = &wv;
                handles.push(scope.spawn(move || {
                    let mut out = Vec::new();
                    for (idx, task) in tasks.iter().enumerate() {
                        if idx % workers == worker {
                            out.push((idx, run_cell(cfg, task, wqk, wv)));
                        }
                    }
                    out
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("probe worker panicked"))
                .collect::<Vec<_>>()
        });
        for (idx, result) in results {
            slots[idx] = Some(result?);
        }
    }

    let cells: Vec<ProbeCell> = slots.into_iter().flat_map(|s| s.unwrap()).collect();

    let mut layer_means = Vec::new();
    for mode in &cfg.modes {
        for &len in &cfg.distractor_lengths {
            let group: Vec<&ProbeCell> = cells
                .iter()
                .filter(|c| c.mode == *mode && c.distractor_len == len)
                .collect();
            let k = group.len() as f64;
            layer_means.push(ProbeLayerMean {
                mode: *mode,
                distractor_len: len,
                visual_mass: group.iter().map(|c| c.visual_mass).sum::<f64>() / k,
                per_visual_token_mass: group.iter().map(|c| c.per_visual_token_mass).sum::<f64>()
                    / k,
                mean_inter_logit: group.iter().map(|c| c.mean_inter_logit).sum::<f64>() / k,
            });
        }
    }

    Ok(ProbeReport { cells, layer_means })
}

/// Question-to-visual logits of the first layer only, flattened in
/// (query, head, key) order. Skips the attention pass entirely, which makes
/// invariance checks across long distractor lengths cheap.
pub fn first_layer_inter_logits(
    cfg: &ProbeConfig,
    mode: ProbeMode,
    distractor_len: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (rope, part) = cfg.rope();
    let content = synth_content(cfg, distractor_len);
    let rows = assemble(&content, distractor_len);
    let projections = synth_projections(cfg);
    let x: Vec<Vec<f64>> = rows;
    let qk = matmul(&x, &cast_matrix::<f64>(&projections.wqk[0]));
    let plan = build_plan(&cfg.segments(distractor_len), mode.index_mode())?;
    let case = AttentionCase {
        queries: split_heads(&qk, cfg.heads, cfg.head_dim),
        keys: split_heads(&qk, cfg.heads, cfg.head_dim),
        values: split_heads(&qk, cfg.heads, cfg.head_dim),
        plan,
        config: rope,
        partition: part,
        causal: true,
        intra_image: cfg.intra_image_mask,
    };
    let rotated = RotatedCase::new(&case)?;
    let n = case.n_tokens();
    let attend_mode = mode.attend_mode();
    let mut out = Vec::with_capacity(cfg.question_len * cfg.heads * cfg.n_visual());
    for i in n - cfg.question_len..n {
        for h in 0..cfg.heads {
            for j in 0..cfg.n_visual() {
                out.push(rotated.logit(attend_mode, i, j, h));
            }
        }
    }
    Ok(out)
}

/// Render per-layer cells as CSV: one row per (mode, length, layer), values
/// printed with shortest-round-trip formatting.
pub fn report_to_csv(report: &ProbeReport) -> String {
    let mut out = String::from(
        "mode,distractor_len,layer,visual_mass,per_visual_token_mass,mean_inter_logit\n",
    );
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.mode.name(),
            c.distractor_len,
            c.layer,
            c.visual_mass,
            c.per_visual_token_mass,
            c.mean_inter_logit
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ProbeConfig {
        ProbeConfig {
            seed: 42,
            layers: 2,
            heads: 2,
            head_dim: 12,
            image_grid: (2, 2),
            question_len: 4,
            distractor_lengths: vec![0, 16, 64],
            modes: vec![ProbeMode::Vanilla, ProbeMode::Mrope, ProbeMode::Dipe],
            intra_image_mask: IntraImageMask::Causal,
        }
    }

    #[test]
    fn sequences_share_content_across_lengths() {
        let cfg = small_cfg();
        let (short, _) = synth_sequence(&cfg, 0).unwrap();
        let (long, plan) = synth_sequence(&cfg, 64).unwrap();
        assert_eq!(short.len(), 4 + 4);
        assert_eq!(long.len(), 4 + 64 + 4);
        assert_eq!(plan.len(), long.len());
        assert_eq!(&short[..4], &long[..4]);
        assert_eq!(&short[4..], &long[68..]);
        let (mid, _) = synth_sequence(&cfg, 16).unwrap();
        assert_eq!(&mid[4..20], &long[4..20]);
    }

    #[test]
    fn question_anchor_is_length_independent() {
        let cfg = small_cfg();
        let (_, p0) = synth_sequence(&cfg, 0).unwrap();
        let (_, p64) = synth_sequence(&cfg, 64).unwrap();
        let a0 = p0.ape[p0.len() - 1];
        let a64 = p64.ape[p64.len() - 1];
        assert_eq!(a0, a64);
    }

    #[test]
    fn report_shape_and_header() {
        let cfg = small_cfg();
        let report = run_probe::<f64>(&cfg, 1).unwrap();
        assert_eq!(report.cells.len(), 3 * 3 * 2);
        assert_eq!(report.layer_means.len(), 3 * 3);
        let csv = report_to_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "mode,distractor_len,layer,visual_mass,per_visual_token_mass,mean_inter_logit"
        );
        assert_eq!(lines.count(), 3 * 3 * 2);
        for c in &report.cells {
            assert!(
                c.visual_mass >= 0.0 && c.visual_mass <= 1.0,
                "{}",
                c.visual_mass
            );
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let cfg = small_cfg();
        let a = report_to_csv(&run_probe::<f64>(&cfg, 1).unwrap());
        let b = report_to_csv(&run_probe::<f64>(&cfg, 1).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_the_report() {
        let cfg = small_cfg();
        let a = report_to_csv(&run_probe::<f64>(&cfg, 1).unwrap());
        let b = report_to_csv(&run_probe::<f64>(&cfg, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn anchored_first_layer_logits_are_length_invariant() {
        let cfg = small_cfg();
        let base = first_layer_inter_logits(&cfg, ProbeMode::Dipe, 0).unwrap();
        for len in [16, 64] {
            let other = first_layer_inter_logits(&cfg, ProbeMode::Dipe, len).unwrap();
            for (a, b) in base.iter().zip(other.iter()) {
                assert!((a - b).abs() < 1e-9, "dipe logits moved: {a} vs {b}");
            }
        }
        // Sequential indexing does move them.
        let m0 = first_layer_inter_logits(&cfg, ProbeMode::Mrope, 0).unwrap();
        let m64 = first_layer_inter_logits(&cfg, ProbeMode::Mrope, 64).unwrap();
        let max_gap = m0
            .iter()
            .zip(m64.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_gap > 1e-3,
            "mrope logits unexpectedly static ({max_gap})"
        );
    }

    #[test]
    fn first_layer_helper_matches_probe_cells() {
        let cfg = small_cfg();
        let report = run_probe::<f64>(&cfg, 1).unwrap();
        for mode in [ProbeMode::Vanilla, ProbeMode::Mrope, ProbeMode::Dipe] {
            for &len in &cfg.distractor_lengths {
                let logits = first_layer_inter_logits(&cfg, mode, len).unwrap();
                let mean = logits.iter().sum::<f64>() / logits.len() as f64;
                let cell = report
                    .cells
                    .iter()
                    .find(|c| c.mode == mode && c.distractor_len == len && c.layer == 0)
                    .unwrap();
                assert!(
                    (cell.mean_inter_logit - mean).abs() < 1e-12,
                    "cell/helper disagree for {mode:?} len {len}"
                );
            }
        }
    }

    #[test]
    fn f32_probe_runs_and_stays_close_to_f64() {
        let cfg = small_cfg();
        let a = run_probe::<f64>(&cfg, 1).unwrap();
        let b = run_probe::<f32>(&cfg, 1).unwrap();
        for (x, y) in a.cells.iter().zip(b.cells.iter()) {
            assert!((x.visual_mass - y.visual_mass).abs() < 1e-3);
        }
    }

    #[test]
    fn full_intra_image_mask_is_accepted() {
        let mut cfg = small_cfg();
        cfg.intra_image_mask = IntraImageMask::Full;
        cfg.distractor_lengths = vec![0, 8];
        let report = run_probe::<f64>(&cfg, 1).unwrap();
        assert_eq!(report.cells.len(), 3 * 2 * 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.distractor_lengths = vec![8, 8];
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.modes.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.head_dim = 16; // head_dim/2 not divisible by 3
        assert!(cfg.validate().is_err());
    }
}
