//! Axis-aligned boxes in normalized center/size form, shared by anchor
//! matching, detection decoding, and the evaluator.

/// (cx, cy, w, h), all normalized to [0,1] image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCwh {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BoxCwh {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BoxCwh { cx, cy, w, h }
    }

    /// (x0, y0, x1, y1)
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w * 0.5,
            self.cy - self.h * 0.5,
            self.cx + self.w * 0.5,
            self.cy + self.h * 0.5,
        )
    }

    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        BoxCwh {
            cx: (x0 + x1) * 0.5,
            cy: (y0 + y1) * 0.5,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Clip corners into the unit square, preserving the center/size form.
    pub fn clip_unit(&self) -> BoxCwh {
        let (x0, y0, x1, y1) = self.corners();
        BoxCwh::from_corners(
            x0.clamp(0.0, 1.0),
            y0.clamp(0.0, 1.0),
            x1.clamp(0.0, 1.0),
            y1.clamp(0.0, 1.0),
        )
    }
}

/// Intersection over union; 0 for disjoint or degenerate (zero-area) boxes.
pub fn iou(a: &BoxCwh, b: &BoxCwh) -> f32 {
    let aa = a.area();
    let ab = b.area();
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    inter / (aa + ab - inter)
}
