//! Model components: patch-embedding transformer encoder with a small
//! multi-scale pyramid, anchor detection head, reconstruction decoder, and
//! the two fusion variants. Everything is generic over the element type so
//! the gradient checker can instantiate identical models at f64.

pub mod anchors;
pub mod checkpoint;
pub mod decoder;
pub mod fusion;
pub mod head;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MmcError, Result};
use crate::tensor::{Elem, Tensor};

pub use anchors::AnchorSet;
pub use decoder::ReconDecoder;
pub use fusion::{input_fusion_stem, FeatureFusion};
pub use head::{decode_detections, Detection, DetectionHead, DetectionOutput};

/// Standard-normal draw via Box–Muller; one stream drives all layers of a
/// model in construction order, so a seed pins every weight.
pub(crate) fn normal<E: Elem>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<E> {
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen::<f64>();
            E::from_f64((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std)
        })
        .collect()
}

/// Named parameter list in deterministic construction order.
pub type NamedParams<E> = Vec<(String, Tensor<E>)>;

pub struct Linear<E: Elem = f32> {
    pub w: Tensor<E>, // [in, out]
    pub b: Tensor<E>, // [out]
}

impl<E: Elem> Linear<E> {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Tensor::from_vec(&[d_in, d_out], normal(rng, d_in * d_out, 0.02))
                .expect("linear weight")
                .with_grad(),
            b: Tensor::zeros(&[d_out]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul(&self.w)?.add(&self.b)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct LayerNorm<E: Elem = f32> {
    pub g: Tensor<E>,
    pub b: Tensor<E>,
}

impl<E: Elem> LayerNorm<E> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            g: Tensor::full(&[d], E::one()).with_grad(),
            b: Tensor::zeros(&[d]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.layer_norm(&self.g, &self.b, 1e-5)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        out.push((format!("{prefix}.g"), self.g.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct Conv2dLayer<E: Elem = f32> {
    pub w: Tensor<E>, // [out, in, k, k]
    pub b: Tensor<E>, // [out]
    pub stride: usize,
    pub pad: usize,
}

impl<E: Elem> Conv2dLayer<E> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        Conv2dLayer {
            w: Tensor::from_vec(
                &[c_out, c_in, k, k],
                normal(rng, c_out * fan_in, (1.0 / fan_in as f64).sqrt()),
            )
            .expect("conv weight")
            .with_grad(),
            b: Tensor::zeros(&[c_out]).with_grad(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&self.w, Some(&self.b), self.stride, self.pad)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct ConvT2dLayer<E: Elem = f32> {
    pub w: Tensor<E>, // [in, out, k, k]
    pub b: Tensor<E>,
    pub stride: usize,
    pub pad: usize,
}

impl<E: Elem> ConvT2dLayer<E> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        ConvT2dLayer {
            w: Tensor::from_vec(
                &[c_in, c_out, k, k],
                normal(rng, c_out * fan_in, (1.0 / fan_in as f64).sqrt()),
            )
            .expect("convT weight")
            .with_grad(),
            b: Tensor::zeros(&[c_out]).with_grad(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv_transpose2d(&self.w, Some(&self.b), self.stride, self.pad)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Encoder geometry and width. `in_channels` is 3 for the visual modality,
/// 1 for thermal, or their sum for the input-fusion variant.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub in_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            in_channels: 3,
        }
    }
}

impl EncoderConfig {
    pub fn with_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(MmcError::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(MmcError::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 || self.in_channels == 0 {
            return Err(MmcError::Config("depth and in_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Token grid side length.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Side lengths of the three feature maps the encoder emits.
    pub fn map_resolutions(&self) -> [usize; 3] {
        let g = self.grid();
        let h1 = (g + 2 - 3) / 2 + 1; // 3x3, stride 2, pad 1
        let h2 = (h1 + 2 - 3) / 2 + 1;
        [g, h1, h2]
    }
}

struct Attention<E: Elem> {
    qkv: Linear<E>,
    proj: Linear<E>,
    heads: usize,
}

impl<E: Elem> Attention<E> {
    fn new(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            qkv: Linear::new(d, 3 * d, rng),
            proj: Linear::new(d, d, rng),
            heads,
        }
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = x.shape();
        let (n, d) = (shape[0], shape[1]);
        let h = self.heads;
        let dh = d / h;
        let qkv = self.qkv.forward(x)?; // [N, 3D]
        let split = |start: usize| -> Result<Tensor<E>> {
            // [N,D] -> [H,N,dh]
            qkv.narrow(1, start * d, d)?
                .reshape(&[n, h, dh])?
                .permute(&[1, 0, 2])
        };
        let q = split(0)?;
        let k = split(1)?;
        let v = split(2)?;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let scores = q.matmul(&k.permute(&[0, 2, 1])?)?.mul_scalar(scale); // [H,N,N]
        let attn = scores.softmax_temp(1.0)?;
        let out = attn
            .matmul(&v)? // [H,N,dh]
            .permute(&[1, 0, 2])?
            .reshape(&[n, d])?;
        self.proj.forward(&out)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        self.qkv.collect(&format!("{prefix}.qkv"), out);
        self.proj.collect(&format!("{prefix}.proj"), out);
    }
}

struct Block<E: Elem> {
    ln1: LayerNorm<E>,
    attn: Attention<E>,
    ln2: LayerNorm<E>,
    fc1: Linear<E>,
    fc2: Linear<E>,
}

impl<E: Elem> Block<E> {
    fn new(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Block {
            ln1: LayerNorm::new(d),
            attn: Attention::new(d, heads, rng),
            ln2: LayerNorm::new(d),
            fc1: Linear::new(d, 4 * d, rng),
            fc2: Linear::new(4 * d, d, rng),
        }
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        // pre-norm residual wiring
        let a = self.attn.forward(&self.ln1.forward(x)?)?;
        let x = x.add(&a)?;
        let m = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu())?;
        x.add(&m)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.fc1.collect(&format!("{prefix}.fc1"), out);
        self.fc2.collect(&format!("{prefix}.fc2"), out);
    }
}

/// Patch-embedding transformer with two stride-2 convolution blocks hanging
/// off the token grid, yielding three feature maps (e.g. 8×8, 4×4, 2×2 at
/// the default geometry).
pub struct Encoder<E: Elem = f32> {
    pub cfg: EncoderConfig,
    patch: Conv2dLayer<E>,
    pos: Tensor<E>, // [N, D], learned, zero-initialized
    blocks: Vec<Block<E>>,
    norm: LayerNorm<E>,
    extra: [Conv2dLayer<E>; 2],
}

impl<E: Elem> Encoder<E> {
    pub fn new(cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let g = cfg.grid();
        let patch = Conv2dLayer::new(cfg.in_channels, d, cfg.patch_size, cfg.patch_size, 0, rng);
        let pos = Tensor::zeros(&[g * g, d]).with_grad();
        let blocks = (0..cfg.depth).map(|_| Block::new(d, cfg.heads, rng)).collect();
        let norm = LayerNorm::new(d);
        let extra = [
            Conv2dLayer::new(d, d, 3, 2, 1, rng),
            Conv2dLayer::new(d, d, 3, 2, 1, rng),
        ];
        Ok(Encoder {
            cfg,
            patch,
            pos,
            blocks,
            norm,
            extra,
        })
    }

    /// Three multi-scale feature maps; `maps[0]` is the token grid itself
    /// ([D, g, g]) and feeds the reconstruction decoder.
    pub fn encode(&self, image: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let s = image.shape();
        let want = [self.cfg.in_channels, self.cfg.image_size, self.cfg.image_size];
        if s != want {
            return Err(MmcError::Shape {
                op: "encode",
                lhs: s,
                rhs: want.to_vec(),
            });
        }
        let d = self.cfg.embed_dim;
        let g = self.cfg.grid();
        let mut tokens = self
            .patch
            .forward(image)? // [D, g, g]
            .reshape(&[d, g * g])?
            .permute(&[1, 0])? // [N, D]
            .add(&self.pos)?;
        for b in &self.blocks {
            tokens = b.forward(&tokens)?;
        }
        tokens = self.norm.forward(&tokens)?;
        let map0 = tokens.permute(&[1, 0])?.reshape(&[d, g, g])?;
        let map1 = self.extra[0].forward(&map0)?.gelu();
        let map2 = self.extra[1].forward(&map1)?.gelu();
        Ok(vec![map0, map1, map2])
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        self.patch.collect(&format!("{prefix}.patch"), out);
        out.push((format!("{prefix}.pos"), self.pos.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("{prefix}.block{i}"), out);
        }
        self.norm.collect(&format!("{prefix}.norm"), out);
        for (i, c) in self.extra.iter().enumerate() {
            c.collect(&format!("{prefix}.extra{i}"), out);
        }
    }
}

/// One modality's full network: encoder, detection head, and (for the
/// reconstruction variants) a decoder back to image space.
pub struct Detector<E: Elem = f32> {
    pub enc: Encoder<E>,
    pub head: DetectionHead<E>,
    pub dec: Option<ReconDecoder<E>>,
}

impl<E: Elem> Detector<E> {
    pub fn new(
        cfg: EncoderConfig,
        n_cls: usize,
        per_cell: usize,
        with_decoder: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let dec_channels = cfg.in_channels;
        let embed = cfg.embed_dim;
        let enc = Encoder::new(cfg, rng)?;
        let head = DetectionHead::new(3, embed, per_cell, n_cls, rng);
        let dec = if with_decoder {
            Some(ReconDecoder::new(embed, dec_channels, rng))
        } else {
            None
        };
        Ok(Detector { enc, head, dec })
    }

    pub fn forward(&self, image: &Tensor<E>) -> Result<(Vec<Tensor<E>>, DetectionOutput<E>)> {
        let maps = self.enc.encode(image)?;
        let out = self.head.forward(&maps)?;
        Ok((maps, out))
    }

    pub fn params(&self) -> NamedParams<E> {
        let mut out = Vec::new();
        self.enc.collect("enc", &mut out);
        self.head.collect("head", &mut out);
        if let Some(d) = &self.dec {
            d.collect("dec", &mut out);
        }
        out
    }
}
