//! Three-component rotary encoding and index assignment.
//!
//! A head vector is split into temporal, height and width chunks; each chunk
//! is rotated by its own component of a `(t, h, w)` position tuple. Text
//! tokens carry identical components (`t = h = w`), image patches keep `t`
//! constant across the frame while `h`/`w` follow the grid coordinates.
//!
//! Each chunk derives its plane frequencies from its own local dimension
//! (a chunk of `s` pairs uses `base^(-2j/2s)`), the simplest self-consistent
//! schedule; no split proportions are mandated, so the default partition is
//! equal thirds.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{frequencies_for_dim, rotate_pairs_in_place, RopeConfig};

/// Nonnegative (temporal, height, width) position components for one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct PositionTuple {
    pub t: u32,
    pub h: u32,
    pub w: u32,
}

impl PositionTuple {
    pub fn new(t: u32, h: u32, w: u32) -> Self {
        Self { t, h, w }
    }

    /// Scalar tuple `(p, p, p)` used for sequential text indices.
    pub fn scalar(p: u32) -> Self {
        Self { t: p, h: p, w: p }
    }

    pub fn max_component(&self) -> u32 {
        self.t.max(self.h).max(self.w)
    }
}

impl From<[u32; 3]> for PositionTuple {
    fn from(v: [u32; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<PositionTuple> for [u32; 3] {
    fn from(p: PositionTuple) -> Self {
        [p.t, p.h, p.w]
    }
}

/// Number of rotation planes assigned to each position component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPartition {
    pub t_pairs: usize,
    pub h_pairs: usize,
    pub w_pairs: usize,
}

impl ChunkPartition {
    pub fn new(t_pairs: usize, h_pairs: usize, w_pairs: usize, cfg: &RopeConfig) -> Result<Self> {
        let part = Self {
            t_pairs,
            h_pairs,
            w_pairs,
        };
        part.check(cfg)?;
        Ok(part)
    }

    /// Equal split of the available planes; errors unless `head_dim / 2`
    /// divides evenly into three.
    pub fn equal_thirds(cfg: &RopeConfig) -> Result<Self> {
        let pairs = cfg.pairs();
        if !pairs.is_multiple_of(3) {
            return Err(Error::BadPartition {
                detail: format!(
                    "head_dim/2 = {pairs} is not divisible by 3; supply an explicit partition"
                ),
            });
        }
        Self::new(pairs / 3, pairs / 3, pairs / 3, cfg)
    }

    pub fn check(&self, cfg: &RopeConfig) -> Result<()> {
        if self.t_pairs == 0 || self.h_pairs == 0 || self.w_pairs == 0 {
            return Err(Error::BadPartition {
                detail: "every chunk needs at least one rotation plane".into(),
            });
        }
        let total = self.t_pairs + self.h_pairs + self.w_pairs;
        if total != cfg.pairs() {
            return Err(Error::BadPartition {
                detail: format!(
                    "partition covers {total} planes but head_dim/2 = {}",
                    cfg.pairs()
                ),
            });
        }
        Ok(())
    }
}

/// Precomputed per-chunk frequency tables for repeated rotation calls.
#[derive(Debug, Clone)]
pub struct MropeRotator {
    head_dim: usize,
    /// (pair count, local frequency list) per chunk, in t/h/w order.
    chunks: [(usize, Vec<f64>); 3],
}

impl MropeRotator {
    pub fn new(cfg: &RopeConfig, part: &ChunkPartition) -> Result<Self> {
        part.check(cfg)?;
        let chunk = |pairs: usize| (pairs, frequencies_for_dim(pairs * 2, cfg.base));
        Ok(Self {
            head_dim: cfg.head_dim,
            chunks: [
                chunk(part.t_pairs),
                chunk(part.h_pairs),
                chunk(part.w_pairs),
            ],
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Rotate a head vector by an integer position tuple.
    pub fn rotate<T: Float>(&self, vec: &[T], pos: &PositionTuple) -> Result<Vec<T>> {
        self.rotate_at(vec, pos.t as f64, pos.h as f64, pos.w as f64)
    }

    /// Rotate by real-valued components; negative values express relative
    /// offsets, which is how the per-component distance identity is checked.
    pub fn rotate_at<T: Float>(&self, vec: &[T], t: f64, h: f64, w: f64) -> Result<Vec<T>> {
        if vec.len() != self.head_dim {
            return Err(Error::DimMismatch {
                expected: self.head_dim,
                got: vec.len(),
            });
        }
        let mut out = vec.to_vec();
        self.rotate_in_place(&mut out, t, h, w);
        Ok(out)
    }

    pub(crate) fn rotate_in_place<T: Float>(&self, vec: &mut [T], t: f64, h: f64, w: f64) {
        let mut offset = 0;
        for ((pairs, freqs), component) in self.chunks.iter().zip([t, h, w]) {
            let chunk = &mut vec[offset..offset + pairs * 2];
            rotate_pairs_in_place(chunk, component, freqs);
            offset += pairs * 2;
        }
    }
}

/// Rotate each chunk of `vec` by the matching component of `pos`.
pub fn mrope_rotate<T: Float>(
    vec: &[T],
    pos: &PositionTuple,
    cfg: &RopeConfig,
    part: &ChunkPartition,
) -> Result<Vec<T>> {
    MropeRotator::new(cfg, part)?.rotate(vec, pos)
}

/// Sequential text indices: `(start+i, start+i, start+i)`.
pub fn mrope_text_indices(start: u32, length: usize) -> Vec<PositionTuple> {
    (0..length as u32)
        .map(|i| PositionTuple::scalar(start + i))
        .collect()
}

/// Row-major image indices: patch `(r, c)` gets `(start, start+r, start+c)`.
pub fn mrope_image_indices(start: u32, rows: usize, cols: usize) -> Vec<PositionTuple> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows as u32 {
        for c in 0..cols as u32 {
            out.push(PositionTuple::new(start, start + r, start + c));
        }
    }
    out
}

/// Flat 1D indexing that ignores modality: every token, visual or text, gets
/// the next scalar tuple. Baseline for comparisons against grid-aware
/// assignment.
pub fn vanilla_rope_indices(start: u32, length: usize) -> Vec<PositionTuple> {
    mrope_text_indices(start, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use crate::rope::rotate;

    fn setup(dim: usize) -> (RopeConfig, ChunkPartition) {
        let cfg = RopeConfig::new(dim, 10000.0).unwrap();
        let part = ChunkPartition::equal_thirds(&cfg).unwrap();
        (cfg, part)
    }

    #[test]
    fn zero_tuple_is_identity() {
        let (cfg, part) = setup(12);
        let v = vec![
            1.0, -2.0, 0.5, 3.0, -0.25, 1.5, 0.0, 2.0, -1.0, 0.75, 4.0, -3.0,
        ];
        let out = mrope_rotate(&v, &PositionTuple::new(0, 0, 0), &cfg, &part).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn preserves_norm() {
        let (cfg, part) = setup(48);
        let mut rng = DetRng::new(3);
        for _ in 0..20 {
            let v = rng.normal_vec(48, 1.0);
            let pos = PositionTuple::new(
                rng.next_below(5000) as u32,
                rng.next_below(5000) as u32,
                rng.next_below(5000) as u32,
            );
            let out = mrope_rotate(&v, &pos, &cfg, &part).unwrap();
            let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n1: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_tuple_differs_from_flat_rotation() {
        // Chunked rotation re-derives frequencies per chunk, so even a
        // (p, p, p) tuple disagrees with the flat d-dimensional rotation.
        let (cfg, part) = setup(12);
        let mut rng = DetRng::new(17);
        let v = rng.normal_vec(12, 1.0);
        let chunked = mrope_rotate(&v, &PositionTuple::scalar(7), &cfg, &part).unwrap();
        let flat = rotate(&v, 7.0, &cfg).unwrap();
        let max_diff = chunked
            .iter()
            .zip(flat.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_diff > 1e-3,
            "expected a visible difference, got {max_diff}"
        );
    }

    #[test]
    fn per_component_relative_identity() {
        // Logits depend only on (dt, dh, dw).
        let (cfg, part) = setup(48);
        let rot = MropeRotator::new(&cfg, &part).unwrap();
        let mut rng = DetRng::new(23);
        for _ in 0..50 {
            let q = rng.normal_vec(48, 1.0);
            let k = rng.normal_vec(48, 1.0);
            let m = PositionTuple::new(
                rng.next_below(3000) as u32,
                rng.next_below(3000) as u32,
                rng.next_below(3000) as u32,
            );
            let n = PositionTuple::new(
                rng.next_below(3000) as u32,
                rng.next_below(3000) as u32,
                rng.next_below(3000) as u32,
            );
            let lhs: f64 = rot
                .rotate(&q, &m)
                .unwrap()
                .iter()
                .zip(rot.rotate(&k, &n).unwrap().iter())
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
            let rhs: f64 = q.iter().zip(rel.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "difference {}", (lhs - rhs).abs());
        }
    }

    #[test]
    fn scalar_tuples_depend_only_on_offset() {
        let (cfg, part) = setup(12);
        let rot = MropeRotator::new(&cfg, &part).unwrap();
        let mut rng = DetRng::new(29);
        let q = rng.normal_vec(12, 1.0);
        let k = rng.normal_vec(12, 1.0);
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let at = |m: u32, n: u32| {
            dot(
                &rot.rotate(&q, &PositionTuple::scalar(m)).unwrap(),
                &rot.rotate(&k, &PositionTuple::scalar(n)).unwrap(),
            )
        };
        assert!((at(5, 9) - at(105, 109)).abs() < 1e-9);
        assert!((at(0, 31) - at(400, 431)).abs() < 1e-9);
    }

    #[test]
    fn text_indices_examples() {
        assert_eq!(
            mrope_text_indices(0, 3),
            vec![
                PositionTuple::scalar(0),
                PositionTuple::scalar(1),
                PositionTuple::scalar(2)
            ]
        );
        assert_eq!(
            mrope_text_indices(5, 2),
            vec![PositionTuple::scalar(5), PositionTuple::scalar(6)]
        );
        let run = mrope_text_indices(7, 9);
        assert_eq!(run.iter().map(|p| p.max_component()).max(), Some(15));
    }

    #[test]
    fn image_indices_examples() {
        assert_eq!(
            mrope_image_indices(3, 2, 2),
            vec![
                PositionTuple::new(3, 3, 3),
                PositionTuple::new(3, 3, 4),
                PositionTuple::new(3, 4, 3),
                PositionTuple::new(3, 4, 4),
            ]
        );
        assert_eq!(
            mrope_image_indices(0, 1, 1),
            vec![PositionTuple::new(0, 0, 0)]
        );
        let grid = mrope_image_indices(10, 3, 5);
        let max = grid.iter().map(|p| p.max_component()).max().unwrap();
        assert_eq!(max as usize, 10 + 5 - 1);
    }

    #[test]
    fn vanilla_indices_are_flat() {
        assert_eq!(
            vanilla_rope_indices(0, 4),
            vec![
                PositionTuple::scalar(0),
                PositionTuple::scalar(1),
                PositionTuple::scalar(2),
                PositionTuple::scalar(3)
            ]
        );
        // A flattened 4-patch image starting at 2 is indistinguishable from text.
        assert_eq!(vanilla_rope_indices(2, 4), mrope_text_indices(2, 4));
    }

    #[test]
    fn partition_validation() {
        let cfg = RopeConfig::new(16, 10000.0).unwrap();
        let err = ChunkPartition::equal_thirds(&cfg).unwrap_err();
        assert_eq!(err.code(), "bad_partition");
        assert!(ChunkPartition::new(4, 2, 2, &cfg).is_ok());
        assert!(ChunkPartition::new(4, 4, 4, &cfg).is_err());
        assert!(ChunkPartition::new(0, 4, 4, &cfg).is_err());
        let bad = RopeConfig::new(12, 10000.0).unwrap();
        let v = vec![0.0; 8];
        let part = ChunkPartition::equal_thirds(&bad).unwrap();
        let err = mrope_rotate(&v, &PositionTuple::scalar(1), &bad, &part).unwrap_err();
        assert_eq!(err.code(), "dim_mismatch");
    }

    #[test]
    fn position_tuple_serializes_as_triple() {
        let p = PositionTuple::new(3, 4, 5);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[3,4,5]");
        let back: PositionTuple = serde_json::from_str("[3,4,5]").unwrap();
        assert_eq!(back, p);
    }
}
