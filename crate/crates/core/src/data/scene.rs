//! Procedural paired-scene renderer. Modality A ("visual") sees
//! illumination, color, and night glare; modality B ("thermal") sees only
//! object geometry and heat — never illumination.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Annotation, Image, Sample};
use crate::geom::BoxCwh;
use crate::nn::normal;

pub const SCENE_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Day,
    Night,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Day => "day",
            Domain::Night => "night",
        }
    }
}

/// Full recipe for one scene; identical specs render bit-identical
/// samples.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub domain: Domain,
    pub min_objects: usize,
    pub max_objects: usize,
    /// probability per object of a glare disc (night scenes only)
    pub glare_probability: f64,
    pub noise_a: f64,
    pub noise_b: f64,
    /// pin the illumination instead of drawing it from the domain's range
    pub illumination_override: Option<f32>,
}

impl SceneSpec {
    pub fn new(seed: u64, domain: Domain) -> SceneSpec {
        SceneSpec {
            seed,
            domain,
            min_objects: 1,
            max_objects: 5,
            glare_probability: 0.5,
            noise_a: 0.02,
            noise_b: 0.02,
            illumination_override: None,
        }
    }
}

struct Obj {
    class_id: usize,
    bbox: BoxCwh,
    /// per-channel additive contrast in modality A (objects are brighter)
    color: [f32; 3],
}

/// Whether the class's rendered shape covers normalized point (u, v).
/// Shapes are inscribed so their tight bounds equal `bbox`.
pub fn shape_covers(class_id: usize, bbox: &BoxCwh, u: f32, v: f32) -> bool {
    let (cx, cy, w, h) = (bbox.cx, bbox.cy, bbox.w, bbox.h);
    let inside_ellipse = |ecx: f32, ecy: f32, rx: f32, ry: f32| {
        let du = (u - ecx) / rx;
        let dv = (v - ecy) / ry;
        du * du + dv * dv <= 1.0
    };
    match class_id {
        // person: tall ellipse filling the box
        1 => inside_ellipse(cx, cy, w / 2.0, h / 2.0),
        // car: the box itself
        2 => (u - cx).abs() <= w / 2.0 && (v - cy).abs() <= h / 2.0,
        // cyclist: wheel circle at the bottom edge + body ellipse above
        3 => {
            let r = w / 2.0;
            let wheel_cy = cy + h / 2.0 - r;
            let du = u - cx;
            let dv = v - wheel_cy;
            let wheel = du * du + dv * dv <= r * r;
            wheel || inside_ellipse(cx, cy - 0.15 * h, 0.425 * w, 0.35 * h)
        }
        _ => false,
    }
}

fn draw_objects(rng: &mut ChaCha8Rng, n: usize) -> Vec<Obj> {
    let margin = 1.0 / SCENE_SIZE as f32;
    (0..n)
        .map(|_| {
            let class_id = rng.gen_range(1..=3usize);
            let (w, aspect) = match class_id {
                1 => (rng.gen_range(0.08..0.14f32), rng.gen_range(2.0..2.8f32)),
                2 => (rng.gen_range(0.16..0.30f32), rng.gen_range(0.45..0.6f32)),
                _ => (rng.gen_range(0.10..0.18f32), rng.gen_range(1.2..1.6f32)),
            };
            let h = w * aspect;
            let cx = rng.gen_range(w / 2.0 + margin..1.0 - w / 2.0 - margin);
            let cy = rng.gen_range(h / 2.0 + margin..1.0 - h / 2.0 - margin);
            let color = [
                rng.gen_range(0.25..0.5f32),
                rng.gen_range(0.25..0.5f32),
                rng.gen_range(0.25..0.5f32),
            ];
            Obj {
                class_id,
                bbox: BoxCwh::new(cx, cy, w, h),
                color,
            }
        })
        .collect()
}

#[inline]
fn px_center(i: usize) -> f32 {
    (i as f32 + 0.5) / SCENE_SIZE as f32
}

/// One horizontal-then-vertical pass of a [1,2,1]/4 kernel with clamped
/// edges, per channel.
fn blur_pass(img: &mut Image) {
    let (c, h, w) = (img.c, img.h, img.w);
    let mut tmp = vec![0.0f32; h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let l = img.get(ch, y, x.saturating_sub(1));
                let m = img.get(ch, y, x);
                let r = img.get(ch, y, (x + 1).min(w - 1));
                tmp[y * w + x] = 0.25 * l + 0.5 * m + 0.25 * r;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let u = tmp[y.saturating_sub(1) * w + x];
                let m = tmp[y * w + x];
                let d = tmp[(y + 1).min(h - 1) * w + x];
                img.set(ch, y, x, 0.25 * u + 0.5 * m + 0.25 * d);
            }
        }
    }
}

fn render_thermal(objects: &[Obj], rng: &mut ChaCha8Rng, noise: f64) -> Image {
    let s = SCENE_SIZE;
    let mut img = Image::new(1, s, s);
    let t0 = rng.gen_range(0.15..0.25f32);
    let a1 = rng.gen_range(-0.08..0.08f32);
    let a2 = rng.gen_range(-0.08..0.08f32);
    let heats: Vec<f32> = objects.iter().map(|_| rng.gen_range(0.8..1.0f32)).collect();
    for y in 0..s {
        for x in 0..s {
            let (u, v) = (px_center(x), px_center(y));
            let mut val = (t0 + a1 * u + a2 * v).clamp(0.1, 0.3);
            for (o, &heat) in objects.iter().zip(&heats) {
                if shape_covers(o.class_id, &o.bbox, u, v) {
                    val = heat;
                }
            }
            img.set(0, y, x, val);
        }
    }
    blur_pass(&mut img);
    blur_pass(&mut img);
    let n = normal::<f32>(rng, s * s, noise);
    for (v, e) in img.data.iter_mut().zip(n) {
        *v = (*v + e).clamp(0.0, 1.0);
    }
    img
}

struct Glare {
    cx: f32,
    cy: f32,
    radius: f32,
    intensity: f32,
}

fn render_visual(
    objects: &[Obj],
    illumination: f32,
    glares: &[Glare],
    rng: &mut ChaCha8Rng,
    noise: f64,
) -> Image {
    let s = SCENE_SIZE;
    let mut img = Image::new(3, s, s);
    let g0 = rng.gen_range(0.35..0.55f32);
    let gx = rng.gen_range(-0.25..0.25f32);
    let gy = rng.gen_range(-0.25..0.25f32);
    let tint = [
        rng.gen_range(-0.05..0.05f32),
        rng.gen_range(-0.05..0.05f32),
        rng.gen_range(-0.05..0.05f32),
    ];
    for y in 0..s {
        for x in 0..s {
            let (u, v) = (px_center(x), px_center(y));
            let covering = objects
                .iter()
                .find(|o| shape_covers(o.class_id, &o.bbox, u, v));
            let mut glare_add = 0.0f32;
            for g in glares {
                let d2 = (u - g.cx).powi(2) + (v - g.cy).powi(2);
                let r2 = g.radius * g.radius;
                if d2 < r2 {
                    glare_add += g.intensity * (1.0 - d2 / r2);
                }
            }
            for ch in 0..3 {
                let mut val = illumination * (g0 + gx * u + gy * v + tint[ch]);
                if let Some(o) = covering {
                    val += illumination * o.color[ch];
                }
                val += glare_add;
                img.set(ch, y, x, val);
            }
        }
    }
    let n = normal::<f32>(rng, 3 * s * s, noise);
    for (v, e) in img.data.iter_mut().zip(n) {
        *v = (*v + e * illumination).clamp(0.0, 1.0);
    }
    img
}

/// Render one paired sample. Four independent RNG streams keep modality B
/// a pure function of geometry and the thermal stream: illumination,
/// background color, glare, and photometric noise never touch it.
pub fn generate_scene(spec: &SceneSpec) -> Sample {
    let mut geom = crate::rng::stream(spec.seed, "scene/geom", &[]);
    let n = geom.gen_range(spec.min_objects..=spec.max_objects.max(spec.min_objects));
    let objects = draw_objects(&mut geom, n);

    let mut thermal = crate::rng::stream(spec.seed, "scene/thermal", &[]);
    let image_b = render_thermal(&objects, &mut thermal, spec.noise_b);

    let mut light = crate::rng::stream(spec.seed, "scene/light", &[]);
    let illumination = spec.illumination_override.unwrap_or_else(|| match spec.domain {
        Domain::Day => light.gen_range(0.7..1.0f32),
        Domain::Night => light.gen_range(0.05..0.3f32),
    });
    let glares = if spec.domain == Domain::Night {
        let mut rng = crate::rng::stream(spec.seed, "scene/glare", &[]);
        objects
            .iter()
            .filter_map(|o| {
                let hit = rng.gen::<f64>() < spec.glare_probability;
                let dx = rng.gen_range(-0.3..0.3f32) * o.bbox.w;
                let dy = rng.gen_range(-0.3..0.3f32) * o.bbox.h;
                let radius = o.bbox.w.max(o.bbox.h) * rng.gen_range(0.7..1.1f32);
                let intensity = rng.gen_range(0.35..0.6f32);
                hit.then_some(Glare {
                    cx: o.bbox.cx + dx,
                    cy: o.bbox.cy + dy,
                    radius,
                    intensity,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let image_a = render_visual(&objects, illumination, &glares, &mut light, spec.noise_a);

    Sample {
        id: 0,
        image_a,
        image_b,
        boxes: objects
            .iter()
            .map(|o| Annotation {
                class_id: o.class_id,
                bbox: o.bbox,
            })
            .collect(),
        domain: spec.domain,
        illumination,
    }
}
