//! The fifteen natural corruptions at five severities.
//!
//! Severity parameter tables live in [`tables`] — the single source of
//! truth, chosen for a 64×64 desk-scale image. Noise-like corruptions
//! (noises, glass shuffle, fog/frost fields, snow streaks, elastic
//! displacement) draw from a stream keyed by the spec seed, kind, and
//! severity, so identical specs always produce identical bytes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MmcError, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Per-severity parameters for every corruption, severities 1..=5 mapping
/// to indices 0..=4.
pub mod tables {
    /// Gaussian noise standard deviation.
    pub const GAUSSIAN_SIGMA: [f32; 5] = [0.04, 0.06, 0.08, 0.10, 0.14];
    /// Fraction of elements replaced by salt or pepper.
    pub const IMPULSE_FRACTION: [f32; 5] = [0.02, 0.04, 0.07, 0.10, 0.17];
    /// Photon count at intensity 1.0 (lower count = stronger noise).
    pub const SHOT_SCALE: [f32; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
    /// Disk kernel radius in pixels.
    pub const DEFOCUS_RADIUS: [usize; 5] = [1, 2, 3, 4, 6];
    /// (shuffle passes, max displacement in pixels).
    pub const GLASS: [(usize, i64); 5] = [(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)];
    /// Diagonal streak length in pixels.
    pub const MOTION_LENGTH: [usize; 5] = [3, 5, 7, 9, 12];
    /// Largest zoom factor averaged into the image.
    pub const ZOOM_MAX: [f32; 5] = [1.06, 1.12, 1.18, 1.24, 1.32];
    /// Additive brightness shift.
    pub const BRIGHTNESS_SHIFT: [f32; 5] = [0.08, 0.14, 0.20, 0.26, 0.34];
    /// Fog blend thickness.
    pub const FOG_THICKNESS: [f32; 5] = [0.15, 0.25, 0.35, 0.45, 0.55];
    /// Frost overlay opacity.
    pub const FROST_ALPHA: [f32; 5] = [0.18, 0.26, 0.34, 0.42, 0.50];
    /// (streak count, global whitening weight).
    pub const SNOW: [(usize, f32); 5] = [
        (8, 0.0),
        (12, 0.02),
        (16, 0.04),
        (22, 0.07),
        (30, 0.10),
    ];
    /// Contrast scale toward the per-channel mean.
    pub const CONTRAST_FACTOR: [f32; 5] = [0.75, 0.60, 0.45, 0.30, 0.20];
    /// Displacement field magnitude in pixels.
    pub const ELASTIC_MAGNITUDE: [f32; 5] = [0.5, 1.0, 1.5, 2.5, 3.5];
    /// Base quantization step for the block-DCT (higher = blockier).
    pub const JPEG_QBASE: [f32; 5] = [4.0, 8.0, 14.0, 22.0, 36.0];
    /// Pixelation block size.
    pub const PIXELATE_BLOCK: [usize; 5] = [2, 3, 4, 5, 8];
}

/// The fifteen corruption kinds, grouped noise / blur / weather / digital.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    ShotNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Brightness,
    Fog,
    Frost,
    Snow,
    Contrast,
    Elastic,
    Jpeg,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 15] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GlassBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Fog,
        CorruptionKind::Frost,
        CorruptionKind::Snow,
        CorruptionKind::Contrast,
        CorruptionKind::Elastic,
        CorruptionKind::Jpeg,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::GlassBlur => "glass_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Fog => "fog",
            CorruptionKind::Frost => "frost",
            CorruptionKind::Snow => "snow",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Elastic => "elastic",
            CorruptionKind::Jpeg => "jpeg",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn parse(s: &str) -> Result<CorruptionKind> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                MmcError::Parameter(format!(
                    "unknown corruption '{s}' (expected one of: {})",
                    CorruptionKind::ALL.map(CorruptionKind::as_str).join(", ")
                ))
            })
    }

    pub fn group(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise
            | CorruptionKind::ImpulseNoise
            | CorruptionKind::ShotNoise => "noise",
            CorruptionKind::DefocusBlur
            | CorruptionKind::GlassBlur
            | CorruptionKind::MotionBlur
            | CorruptionKind::ZoomBlur => "blur",
            CorruptionKind::Brightness
            | CorruptionKind::Fog
            | CorruptionKind::Frost
            | CorruptionKind::Snow => "weather",
            CorruptionKind::Contrast
            | CorruptionKind::Elastic
            | CorruptionKind::Jpeg
            | CorruptionKind::Pixelate => "digital",
        }
    }
}

/// One concrete corruption instance. Identical specs produce identical
/// outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1..=5
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(MmcError::Parameter(format!(
                "corruption severity must be 1..=5, got {}",
                self.severity
            )));
        }
        Ok(())
    }
}

/// Plain pixel buffer the kernels work on.
struct Img {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Img {
    fn at(&self, ch: usize, y: i64, x: i64) -> f32 {
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        self.data[(ch * self.h + y) * self.w + x]
    }

    fn idx(&self, ch: usize, y: usize, x: usize) -> usize {
        (ch * self.h + y) * self.w + x
    }

    /// Bilinear sample with clamped edges; (y, x) in pixel coordinates.
    fn bilinear(&self, ch: usize, y: f32, x: f32) -> f32 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as i64, x0 as i64);
        let v00 = self.at(ch, y0, x0);
        let v01 = self.at(ch, y0, x0 + 1);
        let v10 = self.at(ch, y0 + 1, x0);
        let v11 = self.at(ch, y0 + 1, x0 + 1);
        v00 * (1.0 - fy) * (1.0 - fx)
            + v01 * (1.0 - fy) * fx
            + v10 * fy * (1.0 - fx)
            + v11 * fy * fx
    }
}

/// Apply `spec` to a rank-3 image in [0,1]; the result is clipped back to
/// [0,1] and keeps the shape.
pub fn corrupt(image: &Tensor<f32>, spec: &CorruptionSpec) -> Result<Tensor<f32>> {
    spec.validate()?;
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(MmcError::Contract(format!(
            "corrupt expects a rank-3 image, got shape {shape:?}"
        )));
    }
    let mut img = Img {
        c: shape[0],
        h: shape[1],
        w: shape[2],
        data: image.to_vec(),
    };
    let s = (spec.severity - 1) as usize;
    let mut rng = stream(
        spec.seed,
        &format!("corrupt/{}", spec.kind.as_str()),
        &[spec.severity as u64],
    );
    match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(&mut img, tables::GAUSSIAN_SIGMA[s], &mut rng),
        CorruptionKind::ImpulseNoise => impulse_noise(&mut img, tables::IMPULSE_FRACTION[s], &mut rng),
        CorruptionKind::ShotNoise => shot_noise(&mut img, tables::SHOT_SCALE[s], &mut rng),
        CorruptionKind::DefocusBlur => img = defocus_blur(&img, tables::DEFOCUS_RADIUS[s]),
        CorruptionKind::GlassBlur => {
            let (passes, disp) = tables::GLASS[s];
            img = glass_blur(&img, passes, disp, &mut rng);
        }
        CorruptionKind::MotionBlur => img = motion_blur(&img, tables::MOTION_LENGTH[s]),
        CorruptionKind::ZoomBlur => img = zoom_blur(&img, tables::ZOOM_MAX[s]),
        CorruptionKind::Brightness => brightness_shift(&mut img, tables::BRIGHTNESS_SHIFT[s]),
        CorruptionKind::Fog => fog(&mut img, tables::FOG_THICKNESS[s], &mut rng),
        CorruptionKind::Frost => frost(&mut img, tables::FROST_ALPHA[s], &mut rng),
        CorruptionKind::Snow => {
            let (streaks, whitening) = tables::SNOW[s];
            snow(&mut img, streaks, whitening, &mut rng);
        }
        CorruptionKind::Contrast => contrast_scale(&mut img, tables::CONTRAST_FACTOR[s]),
        CorruptionKind::Elastic => img = elastic(&img, tables::ELASTIC_MAGNITUDE[s], &mut rng),
        CorruptionKind::Jpeg => jpeg(&mut img, tables::JPEG_QBASE[s]),
        CorruptionKind::Pixelate => pixelate(&mut img, tables::PIXELATE_BLOCK[s]),
    }
    for v in img.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec(&shape, img.data)
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller; u1 is kept away from 0.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

fn gaussian_noise(img: &mut Img, sigma: f32, rng: &mut ChaCha8Rng) {
    for v in img.data.iter_mut() {
        *v += sigma * normal(rng);
    }
}

fn impulse_noise(img: &mut Img, fraction: f32, rng: &mut ChaCha8Rng) {
    for v in img.data.iter_mut() {
        if rng.gen::<f32>() < fraction {
            *v = if rng.gen::<f32>() < 0.5 { 0.0 } else { 1.0 };
        }
    }
}

/// Poisson draw by Knuth's product method (fine for the rates we use).
fn poisson(lambda: f32, rng: &mut ChaCha8Rng) -> u32 {
    let l = (-(lambda as f64)).exp();
    let mut k = 0u32;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
        if k > 4000 {
            return k; // unreachable at our rates; guards against spin
        }
    }
}

fn shot_noise(img: &mut Img, scale: f32, rng: &mut ChaCha8Rng) {
    for v in img.data.iter_mut() {
        *v = poisson(v.clamp(0.0, 1.0) * scale, rng) as f32 / scale;
    }
}

fn conv2d_same(img: &Img, kernel: &[f32], k: usize) -> Img {
    let r = (k / 2) as i64;
    let mut out = Img {
        c: img.c,
        h: img.h,
        w: img.w,
        data: vec![0.0; img.data.len()],
    };
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        let wgt = kernel[ky * k + kx];
                        if wgt != 0.0 {
                            acc += wgt * img.at(ch, y as i64 + ky as i64 - r, x as i64 + kx as i64 - r);
                        }
                    }
                }
                let i = out.idx(ch, y, x);
                out.data[i] = acc;
            }
        }
    }
    out
}

fn defocus_blur(img: &Img, radius: usize) -> Img {
    let k = 2 * radius + 1;
    let mut kernel = vec![0.0f32; k * k];
    let r2 = (radius as f32 + 0.5) * (radius as f32 + 0.5);
    let mut total = 0.0;
    for y in 0..k {
        for x in 0..k {
            let dy = y as f32 - radius as f32;
            let dx = x as f32 - radius as f32;
            if dy * dy + dx * dx <= r2 {
                kernel[y * k + x] = 1.0;
                total += 1.0;
            }
        }
    }
    for v in kernel.iter_mut() {
        *v /= total;
    }
    conv2d_same(img, &kernel, k)
}

fn glass_blur(img: &Img, passes: usize, disp: i64, rng: &mut ChaCha8Rng) -> Img {
    // Mild pre-blur, then seeded local swaps.
    let kernel = [
        1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
        2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0,
        1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
    ];
    let mut out = conv2d_same(img, &kernel, 3);
    for _ in 0..passes {
        for y in 0..out.h {
            for x in 0..out.w {
                let dy = rng.gen_range(-disp..=disp);
                let dx = rng.gen_range(-disp..=disp);
                let sy = (y as i64 + dy).clamp(0, out.h as i64 - 1) as usize;
                let sx = (x as i64 + dx).clamp(0, out.w as i64 - 1) as usize;
                for ch in 0..out.c {
                    let i = out.idx(ch, y, x);
                    let j = out.idx(ch, sy, sx);
                    out.data.swap(i, j);
                }
            }
        }
    }
    out
}

fn motion_blur(img: &Img, length: usize) -> Img {
    // Diagonal streak: ones along the main diagonal of a length×length
    // kernel.
    let k = length;
    let mut kernel = vec![0.0f32; k * k];
    for i in 0..k {
        kernel[i * k + i] = 1.0 / k as f32;
    }
    conv2d_same(img, &kernel, k)
}

fn zoom_blur(img: &Img, zoom_max: f32) -> Img {
    let mut factors = Vec::new();
    let mut z = 1.0f32;
    while z <= zoom_max + 1e-6 {
        factors.push(z);
        z += 0.02;
    }
    let cy = (img.h as f32 - 1.0) / 2.0;
    let cx = (img.w as f32 - 1.0) / 2.0;
    let mut out = Img {
        c: img.c,
        h: img.h,
        w: img.w,
        data: vec![0.0; img.data.len()],
    };
    let inv = 1.0 / factors.len() as f32;
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0;
                for &f in &factors {
                    let sy = cy + (y as f32 - cy) / f;
                    let sx = cx + (x as f32 - cx) / f;
                    acc += img.bilinear(ch, sy, sx);
                }
                let i = out.idx(ch, y, x);
                out.data[i] = acc * inv;
            }
        }
    }
    out
}

/// Affine brightness: shift 0.0 is exactly the identity.
fn brightness_shift(img: &mut Img, shift: f32) {
    if shift == 0.0 {
        return;
    }
    for v in img.data.iter_mut() {
        *v += shift;
    }
}

/// Affine contrast toward the per-channel mean: factor 1.0 is exactly the
/// identity.
fn contrast_scale(img: &mut Img, factor: f32) {
    if factor == 1.0 {
        return;
    }
    let plane = img.h * img.w;
    for ch in 0..img.c {
        let slice = &mut img.data[ch * plane..(ch + 1) * plane];
        let mean = slice.iter().sum::<f32>() / plane as f32;
        for v in slice.iter_mut() {
            *v = (*v - mean) * factor + mean;
        }
    }
}

/// Coarse random grid upsampled bilinearly, normalized to [0,1].
fn value_noise(h: usize, w: usize, grid: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let g: Vec<f32> = (0..grid * grid).map(|_| rng.gen::<f32>()).collect();
    let coarse = Img {
        c: 1,
        h: grid,
        w: grid,
        data: g,
    };
    let mut out = vec![0.0f32; h * w];
    let sy = (grid as f32 - 1.0) / (h as f32 - 1.0).max(1.0);
    let sx = (grid as f32 - 1.0) / (w as f32 - 1.0).max(1.0);
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = coarse.bilinear(0, y as f32 * sy, x as f32 * sx);
        }
    }
    let lo = out.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = out.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    for v in out.iter_mut() {
        *v = (*v - lo) / span;
    }
    out
}

fn fog(img: &mut Img, thickness: f32, rng: &mut ChaCha8Rng) {
    let coarse = value_noise(img.h, img.w, 4, rng);
    let fine = value_noise(img.h, img.w, 8, rng);
    let plane = img.h * img.w;
    for ch in 0..img.c {
        for p in 0..plane {
            let field = 0.65 * coarse[p] + 0.35 * fine[p];
            let t = thickness * field;
            let i = ch * plane + p;
            img.data[i] = img.data[i] * (1.0 - t) + 0.9 * t;
        }
    }
}

fn frost(img: &mut Img, alpha: f32, rng: &mut ChaCha8Rng) {
    let n1 = value_noise(img.h, img.w, 16, rng);
    let n2 = value_noise(img.h, img.w, 32, rng);
    let plane = img.h * img.w;
    for p in 0..plane {
        let crystal = n1[p] * n2[p];
        // Smoothstep between 0.45 and 0.60 picks out crystalline patches.
        let m = ((crystal - 0.45) / 0.15).clamp(0.0, 1.0);
        let m = m * m * (3.0 - 2.0 * m);
        let a = alpha * m;
        if a > 0.0 {
            for ch in 0..img.c {
                let i = ch * plane + p;
                img.data[i] = img.data[i] * (1.0 - a) + 0.85 * a;
            }
        }
    }
}

fn snow(img: &mut Img, streaks: usize, whitening: f32, rng: &mut ChaCha8Rng) {
    if whitening > 0.0 {
        for v in img.data.iter_mut() {
            *v = *v * (1.0 - whitening) + 0.94 * whitening;
        }
    }
    for _ in 0..streaks {
        let x0 = rng.gen_range(0.0..img.w as f32);
        let y0 = rng.gen_range(0.0..img.h as f32);
        let len = rng.gen_range(4.0..9.0f32);
        let angle = (-65.0 + rng.gen_range(-10.0..10.0f32)).to_radians();
        let (dy, dx) = (-angle.sin(), angle.cos());
        let steps = len.ceil() as usize;
        for t in 0..=steps {
            let y = (y0 + dy * t as f32).round() as i64;
            let x = (x0 + dx * t as f32).round() as i64;
            if y < 0 || x < 0 || y >= img.h as i64 || x >= img.w as i64 {
                continue;
            }
            for ch in 0..img.c {
                let i = (ch * img.h + y as usize) * img.w + x as usize;
                img.data[i] += 0.75 * (1.0 - img.data[i]);
            }
        }
    }
}

fn elastic(img: &Img, magnitude: f32, rng: &mut ChaCha8Rng) -> Img {
    // Smooth displacement: coarse 8×8 Gaussian offsets per axis,
    // bilinearly upsampled.
    let grid = 8usize;
    let field: Vec<f32> = (0..2 * grid * grid)
        .map(|_| magnitude * normal(rng))
        .collect();
    let coarse_y = Img {
        c: 1,
        h: grid,
        w: grid,
        data: field[..grid * grid].to_vec(),
    };
    let coarse_x = Img {
        c: 1,
        h: grid,
        w: grid,
        data: field[grid * grid..].to_vec(),
    };
    let sy = (grid as f32 - 1.0) / (img.h as f32 - 1.0).max(1.0);
    let sx = (grid as f32 - 1.0) / (img.w as f32 - 1.0).max(1.0);
    let mut out = Img {
        c: img.c,
        h: img.h,
        w: img.w,
        data: vec![0.0; img.data.len()],
    };
    for y in 0..img.h {
        for x in 0..img.w {
            let dy = coarse_y.bilinear(0, y as f32 * sy, x as f32 * sx);
            let dx = coarse_x.bilinear(0, y as f32 * sy, x as f32 * sx);
            for ch in 0..img.c {
                let i = out.idx(ch, y, x);
                out.data[i] = img.bilinear(ch, y as f32 + dy, x as f32 + dx);
            }
        }
    }
    out
}

/// 8×8 block DCT quantize/dequantize; quantization step grows with
/// frequency and with `qbase`.
fn jpeg(img: &mut Img, qbase: f32) {
    // cos[(2x+1)uπ/16] table.
    let mut cos_t = [[0.0f32; 8]; 8];
    for u in 0..8 {
        for x in 0..8 {
            cos_t[u][x] =
                ((2.0 * x as f32 + 1.0) * u as f32 * std::f32::consts::PI / 16.0).cos();
        }
    }
    let cu = |u: usize| if u == 0 { 1.0 / 2.0f32.sqrt() } else { 1.0 };
    let plane = img.h * img.w;
    for ch in 0..img.c {
        for by in (0..img.h).step_by(8) {
            for bx in (0..img.w).step_by(8) {
                // Gather the block with edge replication.
                let mut block = [[0.0f32; 8]; 8];
                for y in 0..8 {
                    for x in 0..8 {
                        let sy = (by + y).min(img.h - 1);
                        let sx = (bx + x).min(img.w - 1);
                        block[y][x] = img.data[ch * plane + sy * img.w + sx] * 255.0 - 128.0;
                    }
                }
                // Forward DCT, quantize, dequantize.
                let mut coef = [[0.0f32; 8]; 8];
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = 0.0;
                        for y in 0..8 {
                            for x in 0..8 {
                                acc += block[y][x] * cos_t[u][y] * cos_t[v][x];
                            }
                        }
                        let f = 0.25 * cu(u) * cu(v) * acc;
                        let q = qbase * (1.0 + (u + v) as f32);
                        coef[u][v] = (f / q).round() * q;
                    }
                }
                // Inverse DCT, scatter back.
                for y in 0..8 {
                    for x in 0..8 {
                        let mut acc = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                acc += cu(u) * cu(v) * coef[u][v] * cos_t[u][y] * cos_t[v][x];
                            }
                        }
                        let val = (0.25 * acc + 128.0) / 255.0;
                        let ty = by + y;
                        let tx = bx + x;
                        if ty < img.h && tx < img.w {
                            img.data[ch * plane + ty * img.w + tx] = val;
                        }
                    }
                }
            }
        }
    }
}

fn pixelate(img: &mut Img, block: usize) {
    let plane = img.h * img.w;
    for ch in 0..img.c {
        for by in (0..img.h).step_by(block) {
            for bx in (0..img.w).step_by(block) {
                let ey = (by + block).min(img.h);
                let ex = (bx + block).min(img.w);
                let mut acc = 0.0;
                for y in by..ey {
                    for x in bx..ex {
                        acc += img.data[ch * plane + y * img.w + x];
                    }
                }
                let mean = acc / ((ey - by) * (ex - bx)) as f32;
                for y in by..ey {
                    for x in bx..ex {
                        img.data[ch * plane + y * img.w + x] = mean;
                    }
                }
            }
        }
    }
}
