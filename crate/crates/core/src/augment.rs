//! Training-time augmentation: a shared random crop over both modalities
//! and photometric jitter on the visual modality only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Annotation, Image, Sample};
use crate::error::{MmcError, Result};
use crate::geom::BoxCwh;

/// Draw ranges for [`draw_params`]. Thermal photometric jitter stays off:
/// the sensor has no hue or saturation, and contrast jitter on it is
/// disabled by default.
#[derive(Clone, Debug)]
pub struct AugmentRanges {
    pub min_crop_scale: f64,
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue_degrees: f64,
    pub photometric_on_b: bool,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            min_crop_scale: 0.6,
            contrast: (0.5, 1.5),
            saturation: (0.5, 1.5),
            hue_degrees: 18.0,
            photometric_on_b: false,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_crop_scale > 0.0 && self.min_crop_scale <= 1.0) {
            return Err(MmcError::Parameter(format!(
                "min_crop_scale must be in (0, 1], got {}",
                self.min_crop_scale
            )));
        }
        for (name, (lo, hi)) in [("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(MmcError::Parameter(format!(
                    "{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        if !(self.hue_degrees >= 0.0) || !self.hue_degrees.is_finite() {
            return Err(MmcError::Parameter(format!(
                "hue_degrees must be >= 0, got {}",
                self.hue_degrees
            )));
        }
        Ok(())
    }
}

/// One concrete augmentation: crop window in normalized coordinates plus
/// photometric factors. `identity()` leaves a sample untouched.
#[derive(Clone, Debug)]
pub struct AugmentParams {
    pub crop_x0: f32,
    pub crop_y0: f32,
    pub crop_w: f32,
    pub crop_h: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_shift_deg: f32,
    pub photometric_on_b: bool,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            crop_x0: 0.0,
            crop_y0: 0.0,
            crop_w: 1.0,
            crop_h: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_shift_deg: 0.0,
            photometric_on_b: false,
        }
    }
}

/// Sample one augmentation. The crop draws come from `crop_rng` and the
/// photometric draws from `photo_rng`, so a pipeline that skips jitter
/// cannot desynchronize the crops of its siblings.
pub fn draw_params(
    ranges: &AugmentRanges,
    crop_rng: &mut ChaCha8Rng,
    photo_rng: &mut ChaCha8Rng,
) -> AugmentParams {
    let s = crop_rng.gen_range(ranges.min_crop_scale..=1.0) as f32;
    let x0 = crop_rng.gen_range(0.0..=1.0 - s);
    let y0 = crop_rng.gen_range(0.0..=1.0 - s);
    AugmentParams {
        crop_x0: x0,
        crop_y0: y0,
        crop_w: s,
        crop_h: s,
        contrast: photo_rng.gen_range(ranges.contrast.0..=ranges.contrast.1) as f32,
        saturation: photo_rng.gen_range(ranges.saturation.0..=ranges.saturation.1) as f32,
        hue_shift_deg: photo_rng.gen_range(-ranges.hue_degrees..=ranges.hue_degrees) as f32,
        photometric_on_b: ranges.photometric_on_b,
    }
}

/// Bilinear resample of the crop window back to the original resolution.
fn crop_image(img: &Image, p: &AugmentParams) -> Image {
    let mut out = Image::new(img.c, img.h, img.w);
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let u = p.crop_x0 + (x as f32 + 0.5) / img.w as f32 * p.crop_w;
                let v = p.crop_y0 + (y as f32 + 0.5) / img.h as f32 * p.crop_h;
                let sx = (u * img.w as f32 - 0.5).clamp(0.0, (img.w - 1) as f32);
                let sy = (v * img.h as f32 - 0.5).clamp(0.0, (img.h - 1) as f32);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(img.w - 1), (y0 + 1).min(img.h - 1));
                let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
                let top = img.get(ch, y0, x0) * (1.0 - fx) + img.get(ch, y0, x1) * fx;
                let bot = img.get(ch, y1, x0) * (1.0 - fx) + img.get(ch, y1, x1) * fx;
                out.set(ch, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Clip a box to the crop window and remap into crop coordinates; None
/// when less than `min_keep` of its area remains.
fn remap_box(b: &BoxCwh, p: &AugmentParams, min_keep: f32) -> Option<BoxCwh> {
    let (x0, y0, x1, y1) = b.corners();
    let cx0 = x0.max(p.crop_x0);
    let cy0 = y0.max(p.crop_y0);
    let cx1 = x1.min(p.crop_x0 + p.crop_w);
    let cy1 = y1.min(p.crop_y0 + p.crop_h);
    if cx1 <= cx0 || cy1 <= cy0 {
        return None;
    }
    let kept = (cx1 - cx0) * (cy1 - cy0);
    if kept < min_keep * b.area() {
        return None;
    }
    Some(BoxCwh::from_corners(
        ((cx0 - p.crop_x0) / p.crop_w).clamp(0.0, 1.0),
        ((cy0 - p.crop_y0) / p.crop_h).clamp(0.0, 1.0),
        ((cx1 - p.crop_x0) / p.crop_w).clamp(0.0, 1.0),
        ((cy1 - p.crop_y0) / p.crop_h).clamp(0.0, 1.0),
    ))
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / d).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Contrast about the 0.5 pivot, then saturation/hue through HSV, clipped
/// to [0,1]. Single-channel images only get the contrast factor.
fn photometric(img: &mut Image, p: &AugmentParams) {
    for v in img.data.iter_mut() {
        *v = (0.5 + p.contrast * (*v - 0.5)).clamp(0.0, 1.0);
    }
    if img.c != 3 || (p.saturation == 1.0 && p.hue_shift_deg == 0.0) {
        return;
    }
    let hw = img.h * img.w;
    for i in 0..hw {
        let (r, g, b) = (img.data[i], img.data[hw + i], img.data[2 * hw + i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(
            h + p.hue_shift_deg,
            (s * p.saturation).clamp(0.0, 1.0),
            v,
        );
        img.data[i] = r.clamp(0.0, 1.0);
        img.data[hw + i] = g.clamp(0.0, 1.0);
        img.data[2 * hw + i] = b.clamp(0.0, 1.0);
    }
}

fn is_identity_crop(p: &AugmentParams) -> bool {
    p.crop_x0 == 0.0 && p.crop_y0 == 0.0 && p.crop_w == 1.0 && p.crop_h == 1.0
}

/// Crop plus (optionally) photometric jitter on one image. Lets a trainer
/// augment a single modality without ever reading the other.
pub fn augment_image(img: &Image, p: &AugmentParams, photometric_jitter: bool) -> Image {
    let mut out = if is_identity_crop(p) {
        img.clone()
    } else {
        crop_image(img, p)
    };
    if photometric_jitter {
        photometric(&mut out, p);
    }
    out
}

/// Remap annotations into the crop window, dropping boxes that keep less
/// than 25% of their area.
pub fn remap_boxes(boxes: &[Annotation], p: &AugmentParams) -> Vec<Annotation> {
    if is_identity_crop(p) {
        return boxes.to_vec();
    }
    boxes
        .iter()
        .filter_map(|a| {
            remap_box(&a.bbox, p, 0.25).map(|bbox| Annotation {
                class_id: a.class_id,
                bbox,
            })
        })
        .collect()
}

/// Apply one augmentation to a paired sample: the crop is identical across
/// modalities, photometric jitter touches modality A (and modality B only
/// if explicitly enabled).
pub fn apply(sample: &Sample, p: &AugmentParams) -> Sample {
    Sample {
        id: sample.id,
        image_a: augment_image(&sample.image_a, p, true),
        image_b: augment_image(&sample.image_b, p, p.photometric_on_b),
        boxes: remap_boxes(&sample.boxes, p),
        domain: sample.domain,
        illumination: sample.illumination,
    }
}
