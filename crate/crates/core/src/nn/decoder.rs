//! Transposed-convolution decoder that reconstructs an image from the
//! finest encoder feature map.

use rand_chacha::ChaCha8Rng;

use super::{ConvT2dLayer, NamedParams};
use crate::error::Result;
use crate::tensor::{Elem, Tensor};

/// Three stride-2 transposed convolutions (kernel 4, pad 1), each doubling
/// the spatial side: g -> 2g -> 4g -> 8g, with GELU between stages and a
/// sigmoid bounding the output to [0, 1].
pub struct ReconDecoder<E: Elem = f32> {
    stages: [ConvT2dLayer<E>; 3],
}

impl<E: Elem> ReconDecoder<E> {
    pub fn new(embed_dim: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid1 = (embed_dim / 2).max(1);
        let mid2 = (embed_dim / 4).max(1);
        ReconDecoder {
            stages: [
                ConvT2dLayer::new(embed_dim, mid1, 4, 2, 1, rng),
                ConvT2dLayer::new(mid1, mid2, 4, 2, 1, rng),
                ConvT2dLayer::new(mid2, out_channels, 4, 2, 1, rng),
            ],
        }
    }

    pub fn forward(&self, map: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.stages[0].forward(map)?.gelu();
        let h = self.stages[1].forward(&h)?.gelu();
        self.stages[2].forward(&h).map(|t| t.sigmoid())
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.collect(&format!("{prefix}.t{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsamples_8_to_64_and_stays_in_unit_range() {
        let mut r = crate::rng::stream(3, "decoder-tests", &[]);
        let dec: ReconDecoder<f32> = ReconDecoder::new(64, 3, &mut r);
        let map = Tensor::from_vec(
            &[64, 8, 8],
            (0..64 * 64).map(|i| ((i % 17) as f32 - 8.0) * 0.3).collect(),
        )
        .unwrap();
        let y = dec.forward(&map).unwrap();
        assert_eq!(y.shape(), vec![3, 64, 64]);
        assert!(y.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn thermal_head_shape() {
        let mut r = crate::rng::stream(3, "decoder-tests", &[1]);
        let dec: ReconDecoder<f32> = ReconDecoder::new(64, 1, &mut r);
        let y = dec.forward(&Tensor::zeros(&[64, 8, 8])).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 64]);
    }

    /// The decoder alone must be able to memorize one target image: a short
    /// gradient-descent run should push squared error close to zero.
    #[test]
    fn overfits_single_target() {
        let mut r = crate::rng::stream(11, "decoder-overfit", &[]);
        let dec: ReconDecoder<f32> = ReconDecoder::new(8, 1, &mut r);
        let map = Tensor::from_vec(
            &[8, 4, 4],
            (0..128).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let target: Vec<f32> = (0..32 * 32)
            .map(|i| if (i / 32 + i % 32) % 2 == 0 { 0.8 } else { 0.2 })
            .collect();
        let tgt = Tensor::from_vec(&[1, 32, 32], target).unwrap();

        let mut params: NamedParams<f32> = Vec::new();
        dec.collect("dec", &mut params);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            for (_, p) in &params {
                p.zero_grad();
            }
            let diff = dec.forward(&map).unwrap().sub(&tgt).unwrap();
            let loss = diff.square().mean_all();
            last = loss.item();
            first.get_or_insert(last);
            loss.backward().unwrap();
            for (_, p) in &params {
                p.update_data(|_, v, g| *v -= 0.5 * g);
            }
        }
        assert!(
            last < 0.01 && last < first.unwrap() * 0.2,
            "loss {} -> {}",
            first.unwrap(),
            last
        );
    }
}
