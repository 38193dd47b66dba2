//! Modality-aware rotary position encoding with anchored inter-modal
//! attention.
//!
//! Standard rotary schemes index every token sequentially, so the attention a
//! text query pays to visual keys decays as the text between them grows. This
//! crate keeps that sequential encoding for same-modality attention but gives
//! every modality segment an anchor — the position tuple of its first token —
//! that queries reuse whenever they look across modalities. Cross-modal
//! relative offsets then stay constant no matter how much text is generated.
//!
//! The crate provides:
//!
//! - [`rope`]: plane rotations, the relative-distance identity, and the
//!   long-range decay profile of rotated dot products;
//! - [`mrope`]: three-component (t, h, w) tuples with chunked rotation and
//!   index assignment for text runs and image grids;
//! - [`plan`]: dual sequential/anchored position plans over modality
//!   segments, with JSON serialization;
//! - [`attention`]: a dense attention oracle, a split intra/inter kernel pair
//!   merged exactly through per-row LogSumExp statistics, and masks;
//! - [`cache`]: append-only KV-cache decoding that matches batch attention;
//! - [`probe`]: a seeded synthetic experiment measuring how attention mass on
//!   visual tokens behaves as distractor text grows;
//! - [`verify`]: the runtime self-check suite behind `dipe verify`.

pub mod attention;
pub mod cache;
pub mod cases;
pub mod error;
pub mod mrope;
pub mod plan;
pub mod probe;
pub mod rng;
pub mod rope;
pub mod verify;

pub use error::{Error, Result};

use num_traits::Float;

/// Lossy cast from f64 into the working float type.
pub(crate) fn real<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 converts into any Float")
}
