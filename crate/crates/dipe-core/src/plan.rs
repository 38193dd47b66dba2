//! Dual position plans over modality segments.
//!
//! A plan assigns every token two position tuples. The sequential tuple (SPE)
//! follows the usual index assignment — running scalars for text, grid
//! coordinates for image patches, with the running offset jumping past each
//! segment's maximum component. The anchored tuple (APE) broadcasts the first
//! sequential tuple of the token's segment to the whole segment.
//!
//! Same-modality attention consumes the sequential tuples on both sides;
//! cross-modality attention rotates the query by its anchored tuple instead,
//! which pins the relative offset between a segment's queries and any key
//! outside it. Growing a trailing text segment therefore never moves its
//! anchor: generated tokens keep a constant perceptual distance to earlier
//! images no matter how long the text becomes.

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrope::{mrope_image_indices, mrope_text_indices, vanilla_rope_indices, PositionTuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
}

/// How sequential indices are assigned to visual segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    /// Grid-aware tuples for image patches, scalars for text.
    #[default]
    Mrope,
    /// Flat scalar indices for every token regardless of modality.
    Vanilla,
}

/// A run of consecutive same-modality tokens supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySegment {
    pub modality: Modality,
    pub length: usize,
    /// `(rows, cols)`, required for visual segments with `rows * cols ==
    /// length`; must be absent for text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
}

impl ModalitySegment {
    pub fn text(length: usize) -> Self {
        Self {
            modality: Modality::Text,
            length,
            grid: None,
        }
    }

    pub fn image(rows: usize, cols: usize) -> Self {
        Self {
            modality: Modality::Visual,
            length: rows * cols,
            grid: Some((rows, cols)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::BadGrid {
                detail: "segment length must be positive".into(),
            });
        }
        match (self.modality, self.grid) {
            (Modality::Visual, Some((r, c))) if r * c == self.length => Ok(()),
            (Modality::Visual, Some((r, c))) => Err(Error::BadGrid {
                detail: format!("grid {r}x{c} does not cover {} tokens", self.length),
            }),
            (Modality::Visual, None) => Err(Error::BadGrid {
                detail: "visual segment requires a grid".into(),
            }),
            (Modality::Text, None) => Ok(()),
            (Modality::Text, Some(_)) => Err(Error::BadGrid {
                detail: "text segment must not carry a grid".into(),
            }),
        }
    }
}

/// Half-open token range `[start, end)` covered by one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: usize,
    pub end: usize,
    pub modality: Modality,
}

/// Per-token sequential and anchored tuples plus segment structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPlan {
    pub spe: Vec<PositionTuple>,
    pub ape: Vec<PositionTuple>,
    pub modality: Vec<Modality>,
    pub segments: Vec<SegmentSpan>,
    #[serde(default)]
    pub mode: IndexMode,
}

impl PositionPlan {
    pub fn len(&self) -> usize {
        self.spe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spe.is_empty()
    }

    /// Largest sequential component in the plan; the next segment would start
    /// one past it.
    pub fn max_spe_component(&self) -> u32 {
        self.spe
            .iter()
            .map(|p| p.max_component())
            .max()
            .unwrap_or(0)
    }

    /// Index of the segment covering token `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        match self.segments.binary_search_by(|s| {
            if i < s.start {
                std::cmp::Ordering::Greater
            } else if i >= s.end {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Equal
            }
        }) {
            Ok(idx) => idx,
            Err(_) => unreachable!("token index out of plan range"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(input: &str) -> Result<Self> {
        parse_json(input)
    }
}

/// Parse JSON, mapping failures to a byte offset into the input.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(input: &str) -> Result<T> {
    serde_json::from_str(input).map_err(|e| Error::ParseError {
        offset: byte_offset(input, e.line(), e.column()),
        detail: e.to_string(),
    })
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (idx, l) in input.split('\n').enumerate() {
        if idx + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    input.len()
}

/// Merge adjacent text segments so a distractor run and the question behind
/// it always share one segment (and one anchor). Adjacent visual segments are
/// kept apart: each image is its own positional unit with its own anchor.
fn normalize(segments: &[ModalitySegment]) -> Vec<ModalitySegment> {
    let mut out: Vec<ModalitySegment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(prev) if prev.modality == Modality::Text && seg.modality == Modality::Text => {
                prev.length += seg.length;
            }
            _ => out.push(*seg),
        }
    }
    out
}

fn indices_for(seg: &ModalitySegment, start: u32, mode: IndexMode) -> Vec<PositionTuple> {
    match (mode, seg.modality) {
        (IndexMode::Vanilla, _) => vanilla_rope_indices(start, seg.length),
        (IndexMode::Mrope, Modality::Text) => mrope_text_indices(start, seg.length),
        (IndexMode::Mrope, Modality::Visual) => {
            let (rows, cols) = seg.grid.expect("validated");
            mrope_image_indices(start, rows, cols)
        }
    }
}

/// Build the dual plan for a segment list.
pub fn build_plan(segments: &[ModalitySegment], mode: IndexMode) -> Result<PositionPlan> {
    if segments.is_empty() {
        return Err(Error::EmptySequence);
    }
    for seg in segments {
        seg.validate()?;
    }
    let segments = normalize(segments);

    let total: usize = segments.iter().map(|s| s.length).sum();
    let mut plan = PositionPlan {
        spe: Vec::with_capacity(total),
        ape: Vec::with_capacity(total),
        modality: Vec::with_capacity(total),
        segments: Vec::with_capacity(segments.len()),
        mode,
    };

    let mut seq_offset = 0u32;
    for seg in &segments {
        let spe_seg = indices_for(seg, seq_offset, mode);
        let anchor = spe_seg[0];
        seq_offset = spe_seg.iter().map(|p| p.max_component()).max().unwrap() + 1;

        let start = plan.spe.len();
        plan.ape.resize(start + spe_seg.len(), anchor);
        plan.modality.resize(start + spe_seg.len(), seg.modality);
        plan.spe.extend(spe_seg);
        plan.segments.push(SegmentSpan {
            start,
            end: plan.spe.len(),
            modality: seg.modality,
        });
    }
    Ok(plan)
}

/// Append `new_tokens` tokens of `modality` to a plan.
///
/// Tokens matching the trailing segment's modality join it: sequential tuples
/// continue and the anchored tuple repeats the existing anchor, so no anchor
/// ever moves during generation. A modality switch opens a fresh segment one
/// past the current sequential maximum, anchored at its own first tuple.
/// Appended visual tokens continue as a single-row strip (`t` fixed, `w`
/// advancing); callers that need a true 2D grid should plan it up front.
pub fn extend_plan(
    plan: &PositionPlan,
    new_tokens: NonZeroUsize,
    modality: Modality,
) -> PositionPlan {
    let mut out = plan.clone();
    let n = new_tokens.get();
    let last = *out.segments.last().expect("plan is nonempty");

    if last.modality == modality {
        let anchor = out.ape[last.start];
        let fresh = match modality {
            Modality::Text => {
                let next = out.spe[last.end - 1].t + 1;
                mrope_text_indices(next, n)
            }
            Modality::Visual => {
                let seg = &out.spe[last.start..last.end];
                let t = anchor.t;
                let h = seg.iter().map(|p| p.h).max().unwrap();
                let w = seg.iter().map(|p| p.w).max().unwrap();
                (0..n as u32)
                    .map(|i| PositionTuple::new(t, h, w + 1 + i))
                    .collect()
            }
        };
        out.spe.extend(fresh);
        out.ape.resize(out.spe.len(), anchor);
        out.modality.resize(out.spe.len(), modality);
        out.segments.last_mut().unwrap().end += n;
    } else {
        let offset = out.max_spe_component() + 1;
        let fresh = match (out.mode, modality) {
            (IndexMode::Vanilla, _) => vanilla_rope_indices(offset, n),
            (IndexMode::Mrope, Modality::Text) => mrope_text_indices(offset, n),
            (IndexMode::Mrope, Modality::Visual) => mrope_image_indices(offset, 1, n),
        };
        let anchor = fresh[0];
        let start = out.spe.len();
        out.spe.extend(fresh);
        out.ape.resize(out.spe.len(), anchor);
        out.modality.resize(out.spe.len(), modality);
        out.segments.push(SegmentSpan {
            start,
            end: start + n,
            modality,
        });
    }
    out
}
