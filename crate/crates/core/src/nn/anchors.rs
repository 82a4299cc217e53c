//! Multi-scale prior boxes and the delta encoding the head regresses.
//!
//! Ordering is load-bearing: scale-major, then row-major over cells, then
//! anchor index within the cell. The head emits predictions in exactly this
//! order and the matcher/decoder index into it.

use crate::error::{MmcError, Result};
use crate::geom::BoxCwh;

/// Center-offset variance of the delta encoding.
pub const VAR_CENTER: f32 = 0.1;
/// Log-size variance of the delta encoding.
pub const VAR_SIZE: f32 = 0.2;

#[derive(Clone, Debug)]
pub struct AnchorSet {
    /// Feature-map side lengths, coarsest grid last.
    pub resolutions: Vec<usize>,
    pub per_cell: usize,
    anchors: Vec<BoxCwh>,
}

impl AnchorSet {
    /// One anchor per (scale, cell, aspect): centered on the cell, sized by
    /// the scale's base size split across aspect ratios (ar = w/h).
    pub fn build(resolutions: &[usize], base_sizes: &[f32], aspects: &[f32]) -> Result<Self> {
        if resolutions.is_empty() || resolutions.len() != base_sizes.len() {
            return Err(MmcError::Parameter(format!(
                "{} resolutions vs {} base sizes",
                resolutions.len(),
                base_sizes.len()
            )));
        }
        if aspects.is_empty() || aspects.iter().any(|&a| a <= 0.0) {
            return Err(MmcError::Parameter("aspect ratios must be positive".into()));
        }
        let mut anchors = Vec::new();
        for (&res, &size) in resolutions.iter().zip(base_sizes) {
            for row in 0..res {
                for col in 0..res {
                    let cx = (col as f32 + 0.5) / res as f32;
                    let cy = (row as f32 + 0.5) / res as f32;
                    for &ar in aspects {
                        let w = (size * ar.sqrt()).clamp(1e-3, 1.0);
                        let h = (size / ar.sqrt()).clamp(1e-3, 1.0);
                        anchors.push(BoxCwh::new(cx, cy, w, h));
                    }
                }
            }
        }
        Ok(AnchorSet {
            resolutions: resolutions.to_vec(),
            per_cell: aspects.len(),
            anchors,
        })
    }

    /// Anchors matching the default encoder geometry (64-pixel images).
    pub fn default_64() -> Self {
        Self::build(&[8, 4, 2], &[0.2, 0.4, 0.65], &[1.0, 0.5, 2.0]).expect("default anchors")
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, i: usize) -> &BoxCwh {
        &self.anchors[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BoxCwh> {
        self.anchors.iter()
    }

    /// Deltas (dcx, dcy, dw, dh) that would regress `anchor` onto `truth`.
    pub fn encode_box(anchor: &BoxCwh, truth: &BoxCwh) -> [f32; 4] {
        [
            (truth.cx - anchor.cx) / (anchor.w * VAR_CENTER),
            (truth.cy - anchor.cy) / (anchor.h * VAR_CENTER),
            (truth.w / anchor.w).ln() / VAR_SIZE,
            (truth.h / anchor.h).ln() / VAR_SIZE,
        ]
    }

    /// Inverse of `encode_box`, clipped to the unit square.
    pub fn decode_box(anchor: &BoxCwh, d: &[f32; 4]) -> BoxCwh {
        BoxCwh {
            cx: anchor.cx + d[0] * anchor.w * VAR_CENTER,
            cy: anchor.cy + d[1] * anchor.h * VAR_CENTER,
            w: anchor.w * (d[2] * VAR_SIZE).exp(),
            h: anchor.h * (d[3] * VAR_SIZE).exp(),
        }
        .clip_unit()
    }
}
