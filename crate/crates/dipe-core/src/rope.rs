//! Rotary position encoding over 2D subspaces.
//!
//! A head of dimension `d` is treated as `d/2` independent planes; position
//! `p` rotates plane `j` by `p * theta_j` with `theta_j = base^(-2j/d)`.
//! Because plane rotations compose additively, the dot product of a rotated
//! query and key depends only on their relative offset, and the magnitude of
//! that product admits an upper bound that decays with distance through
//! phase cancellation ([`decay_bound`]).

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real;

/// How the head dimension is grouped into rotation planes.
///
/// Only adjacent pairing `(x_0,x_1), (x_2,x_3), ...` is implemented; the enum
/// exists so serialized configs pin the convention explicitly. A half-split
/// layout would be equivalent up to a fixed permutation but must never be
/// mixed with this one inside a single build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairConvention {
    #[default]
    AdjacentPairs,
}

/// Rotary encoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    #[serde(default)]
    pub pair_convention: PairConvention,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim < 2 || !head_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig {
                detail: format!("head_dim must be even and >= 2, got {head_dim}"),
            });
        }
        if base.is_nan() || base <= 1.0 {
            return Err(Error::InvalidConfig {
                detail: format!("base must be > 1, got {base}"),
            });
        }
        Ok(Self {
            head_dim,
            base,
            pair_convention: PairConvention::AdjacentPairs,
        })
    }

    pub fn pairs(&self) -> usize {
        self.head_dim / 2
    }
}

/// Per-plane rotation angles for one scalar position.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationAngles {
    /// `angles[j] = position * theta_j`, length `head_dim / 2`.
    pub angles: Vec<f64>,
}

impl RotationAngles {
    pub fn for_position(cfg: &RopeConfig, position: f64) -> Self {
        let angles = frequencies(cfg).iter().map(|t| position * t).collect();
        Self { angles }
    }
}

/// Plane frequencies `theta_j = base^(-2j/head_dim)`, `j = 0..head_dim/2`.
///
/// Strictly decreasing with `theta_0 = 1`.
pub fn frequencies(cfg: &RopeConfig) -> Vec<f64> {
    frequencies_for_dim(cfg.head_dim, cfg.base)
}

pub(crate) fn frequencies_for_dim(dim: usize, base: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|j| base.powf(-2.0 * j as f64 / dim as f64))
        .collect()
}

/// Rotate adjacent pairs of `chunk` by `position * freqs[j]`.
///
/// Angles and trigonometry are evaluated in f64 regardless of `T`; only the
/// final pair arithmetic runs at the working precision.
pub(crate) fn rotate_pairs_in_place<T: Float>(chunk: &mut [T], position: f64, freqs: &[f64]) {
    debug_assert_eq!(chunk.len(), freqs.len() * 2);
    for (j, theta) in freqs.iter().enumerate() {
        let angle = position * theta;
        let (sin, cos) = angle.sin_cos();
        let (c, s) = (real::<T>(cos), real::<T>(sin));
        let x0 = chunk[2 * j];
        let x1 = chunk[2 * j + 1];
        chunk[2 * j] = x0 * c - x1 * s;
        chunk[2 * j + 1] = x0 * s + x1 * c;
    }
}

/// Apply the block-diagonal rotation for `position` to a full head vector.
///
/// Norm-preserving; `rotate(v, 0)` is the identity and
/// `rotate(rotate(v, a), b) == rotate(v, a + b)` up to rounding.
pub fn rotate<T: Float>(vec: &[T], position: f64, cfg: &RopeConfig) -> Result<Vec<T>> {
    if vec.len() != cfg.head_dim {
        return Err(Error::DimMismatch {
            expected: cfg.head_dim,
            got: vec.len(),
        });
    }
    let mut out = vec.to_vec();
    rotate_pairs_in_place(&mut out, position, &frequencies(cfg));
    Ok(out)
}

/// Upper-bound profile for the rotated dot product at a relative distance.
///
/// Evaluates `sum_{j=1}^{d/2} | sum_{l=1}^{j} e^{i theta_l distance} |` with
/// the embedding-dependent constant fixed to 1, so only the relative shape of
/// the curve is meaningful. At distance 0 every phase is zero and the value
/// is the triangular number `(d/2)(d/2+1)/2`; growing distance drives the
/// partial phase sums into oscillatory cancellation. The curve is not
/// monotone point-to-point, but its value at 0 dominates.
pub fn decay_bound(distance: u64, cfg: &RopeConfig) -> f64 {
    let freqs = frequencies(cfg);
    let d = distance as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    let mut total = 0.0;
    for theta in &freqs {
        let phase = theta * d;
        re += phase.cos();
        im += phase.sin();
        total += (re * re + im * im).sqrt();
    }
    total
}
