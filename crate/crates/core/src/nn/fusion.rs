//! Early (input-level) and mid (feature-level) fusion of the two imaging
//! modalities.

use rand_chacha::ChaCha8Rng;

use super::{Conv2dLayer, NamedParams};
use crate::error::{MmcError, Result};
use crate::tensor::{Elem, Tensor};

/// Stack both modalities along the channel axis, first modality's channels
/// first. Spatial sizes must agree exactly.
pub fn input_fusion_stem<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
        return Err(MmcError::Alignment(format!(
            "cannot stack inputs of shapes {sa:?} and {sb:?}"
        )));
    }
    Tensor::concat(&[a, b], 0)
}

/// Per-scale 1×1 convolutions mapping concatenated feature channels (2D)
/// back down to D.
pub struct FeatureFusion<E: Elem = f32> {
    mixers: Vec<Conv2dLayer<E>>,
}

impl<E: Elem> FeatureFusion<E> {
    pub fn new(n_scales: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        FeatureFusion {
            mixers: (0..n_scales)
                .map(|_| Conv2dLayer::new(2 * embed_dim, embed_dim, 1, 1, 0, rng))
                .collect(),
        }
    }

    /// Fuse matched scale pairs: concatenate along channels, then mix with
    /// the scale's 1×1 convolution.
    pub fn fuse(&self, a: &[Tensor<E>], b: &[Tensor<E>]) -> Result<Vec<Tensor<E>>> {
        if a.len() != self.mixers.len() || b.len() != self.mixers.len() {
            return Err(MmcError::Alignment(format!(
                "{} and {} feature maps into a {}-scale fusion",
                a.len(),
                b.len(),
                self.mixers.len()
            )));
        }
        let mut out = Vec::with_capacity(a.len());
        for ((ma, mb), mixer) in a.iter().zip(b).zip(&self.mixers) {
            if ma.shape() != mb.shape() {
                return Err(MmcError::Alignment(format!(
                    "feature maps of shapes {:?} and {:?} cannot be fused",
                    ma.shape(),
                    mb.shape()
                )));
            }
            out.push(mixer.forward(&Tensor::concat(&[ma, mb], 0)?)?);
        }
        Ok(out)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        for (i, m) in self.mixers.iter().enumerate() {
            m.collect(&format!("{prefix}.scale{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_stem_stacks_first_modality_first() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 2], vec![9.0, 8.0]).unwrap();
        let y = input_fusion_stem(&a, &b).unwrap();
        assert_eq!(y.shape(), vec![3, 1, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 9.0, 8.0]);
    }

    #[test]
    fn input_stem_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[3, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 4, 5]);
        assert!(matches!(
            input_fusion_stem(&a, &b),
            Err(MmcError::Alignment(_))
        ));
    }

    #[test]
    fn identity_initialized_mixer_passes_first_input_through() {
        let mut r = crate::rng::stream(5, "fusion-tests", &[]);
        let fusion: FeatureFusion<f32> = FeatureFusion::new(1, 2, &mut r);
        // hand-set the 1×1 kernel [out=2, in=4, 1, 1] to select channels 0,1
        let mut w = vec![0.0f32; 8];
        w[0] = 1.0; // out0 <- in0
        w[5] = 1.0; // out1 <- in1
        fusion.mixers[0].w.set_data(&w).unwrap();
        fusion.mixers[0].b.set_data(&[0.0, 0.0]).unwrap();

        let a = Tensor::from_vec(&[2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let b = Tensor::full(&[2, 2, 2], 7.0);
        let y = fusion.fuse(&[a.clone()], &[b]).unwrap();
        assert_eq!(y[0].to_vec(), a.to_vec());
    }

    #[test]
    fn gradients_reach_both_branches() {
        let mut r = crate::rng::stream(5, "fusion-tests", &[1]);
        let fusion: FeatureFusion<f32> = FeatureFusion::new(1, 2, &mut r);
        let a = Tensor::from_vec(&[2, 2, 2], vec![0.1f32; 8])
            .unwrap()
            .with_grad();
        let b = Tensor::from_vec(&[2, 2, 2], vec![0.2f32; 8])
            .unwrap()
            .with_grad();
        let y = fusion.fuse(&[a.clone()], &[b.clone()]).unwrap();
        y[0].sum_all().backward().unwrap();
        assert!(a.grad_vec().unwrap().iter().any(|&g| g != 0.0));
        assert!(b.grad_vec().unwrap().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn scale_shape_mismatch_rejected() {
        let mut r = crate::rng::stream(5, "fusion-tests", &[2]);
        let fusion: FeatureFusion<f32> = FeatureFusion::new(1, 2, &mut r);
        let a = Tensor::<f32>::zeros(&[2, 4, 4]);
        let b = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(matches!(
            fusion.fuse(&[a], &[b]),
            Err(MmcError::Alignment(_))
        ));
    }
}
