//! Training objectives: anchor matching, detection loss, mimicry KL, and
//! (cross-)reconstruction, plus their weighted composition per variant.

use crate::error::{MmcError, Result};
use crate::geom::{iou, BoxCwh};
use crate::nn::{AnchorSet, DetectionOutput};
use crate::tensor::{Elem, Tensor};

/// Every balancing weight and the distillation temperature, with the two
/// reduction conventions left open by the formulation exposed as flags.
#[derive(Clone, Debug)]
pub struct LossWeights {
    pub lambda_rgb: f64,
    pub lambda_thm: f64,
    pub tau: f64,
    pub lambda_reg: f64,
    pub lambda_rec: f64,
    pub lambda_crossrec_rgb: f64,
    pub lambda_crossrec_thm: f64,
    /// foreground classes (background excluded)
    pub n_cls: usize,
    /// sum the mimicry KL over anchors instead of averaging
    pub kl_sum_over_anchors: bool,
    /// rescale the mimicry term by τ² (classic distillation compensation)
    pub tau_sq_compensation: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rgb: 0.1,
            lambda_thm: 1.0,
            tau: 2.0,
            lambda_reg: 1.0,
            lambda_rec: 5.0,
            lambda_crossrec_rgb: 10.0,
            lambda_crossrec_thm: 5.0,
            n_cls: 3,
            kl_sum_over_anchors: false,
            tau_sq_compensation: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_thm", self.lambda_thm),
            ("lambda_reg", self.lambda_reg),
            ("lambda_rec", self.lambda_rec),
            ("lambda_crossrec_rgb", self.lambda_crossrec_rgb),
            ("lambda_crossrec_thm", self.lambda_crossrec_thm),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(MmcError::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(MmcError::Parameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.n_cls < 1 {
            return Err(MmcError::Parameter("n_cls must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-anchor assignment produced by [`match_anchors`]: label 0 is
/// background, labels 1..=n_cls carry encoded box deltas toward the
/// assigned truth.
#[derive(Clone, Debug)]
pub struct MatchedTargets {
    pub labels: Vec<usize>,
    pub deltas: Vec<[f32; 4]>,
}

impl MatchedTargets {
    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] != 0).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Assign anchors to ground-truth boxes: any anchor overlapping a truth at
/// IoU >= 0.5 is positive for its best-overlapping truth, and each truth
/// additionally claims its single best anchor outright (ties toward the
/// lower anchor index). Everything else is background.
pub fn match_anchors(anchors: &AnchorSet, truths: &[(BoxCwh, usize)]) -> MatchedTargets {
    let a = anchors.len();
    let mut labels = vec![0usize; a];
    let mut assigned = vec![usize::MAX; a]; // truth index per anchor
    if truths.is_empty() {
        return MatchedTargets {
            labels,
            deltas: vec![[0.0; 4]; a],
        };
    }
    let mut best_anchor = vec![(0usize, f32::MIN); truths.len()]; // per truth
    for (ai, anchor) in anchors.iter().enumerate() {
        let mut best = (0usize, f32::MIN);
        for (ti, (tb, _)) in truths.iter().enumerate() {
            let v = iou(anchor, tb);
            if v > best.1 {
                best = (ti, v);
            }
            if v > best_anchor[ti].1 {
                best_anchor[ti] = (ai, v);
            }
        }
        if best.1 >= 0.5 {
            assigned[ai] = best.0;
        }
    }
    // best-match guarantee: each truth in index order claims its top anchor
    for (ti, &(ai, _)) in best_anchor.iter().enumerate() {
        assigned[ai] = ti;
    }
    let mut deltas = vec![[0.0f32; 4]; a];
    for ai in 0..a {
        if assigned[ai] != usize::MAX {
            let (tb, cls) = &truths[assigned[ai]];
            labels[ai] = *cls;
            deltas[ai] = AnchorSet::encode_box(anchors.get(ai), tb);
        }
    }
    MatchedTargets { labels, deltas }
}

/// Detection loss with its two logged components. `total` is the tensor to
/// differentiate; the components stay graph-connected for inspection.
pub struct DetectionLoss<E: Elem = f32> {
    pub total: Tensor<E>,
    pub cls: Tensor<E>,
    pub reg: Tensor<E>,
}

/// `total = (1/n_cls) * cls + lambda_reg * reg` where `cls` is mean
/// cross-entropy over all anchors and `reg` is mean squared delta error
/// over positive-anchor coordinates (0 with no positives).
pub fn detection_loss<E: Elem>(
    output: &DetectionOutput<E>,
    targets: &MatchedTargets,
    weights: &LossWeights,
) -> Result<DetectionLoss<E>> {
    weights.validate()?;
    let a = targets.labels.len();
    let ls = output.class_logits.shape();
    if ls != [a, weights.n_cls + 1] || output.box_deltas.shape() != [a, 4] {
        return Err(MmcError::Shape {
            op: "detection_loss",
            lhs: ls,
            rhs: vec![a, weights.n_cls + 1],
        });
    }
    let cls = output
        .class_logits
        .log_softmax_temp(1.0)?
        .gather_rows(&targets.labels)?
        .mean_all()
        .neg();
    let pos = targets.positive_indices();
    let reg = if pos.is_empty() {
        Tensor::scalar(E::zero())
    } else {
        let predicted = output.box_deltas.select_rows(&pos)?;
        let wanted: Vec<E> = pos
            .iter()
            .flat_map(|&i| targets.deltas[i])
            .map(|v| E::from_f64(v as f64))
            .collect();
        let target = Tensor::from_vec(&[pos.len(), 4], wanted)?;
        predicted.sub(&target)?.square().mean_all()
    };
    let total = cls
        .mul_scalar(E::from_f64(1.0 / weights.n_cls as f64))
        .add(&reg.mul_scalar(E::from_f64(weights.lambda_reg)))?;
    Ok(DetectionLoss { total, cls, reg })
}

/// Forward KL from this network's tempered class distribution to its
/// peer's, averaged over anchors. The peer is a constant target: gradient
/// flows into `logits_self` only.
pub fn kl_mimicry<E: Elem>(
    logits_self: &Tensor<E>,
    logits_peer: &Tensor<E>,
    tau: f64,
) -> Result<Tensor<E>> {
    if logits_self.shape() != logits_peer.shape() {
        return Err(MmcError::Shape {
            op: "kl_mimicry",
            lhs: logits_self.shape(),
            rhs: logits_peer.shape(),
        });
    }
    let shape = logits_self.shape();
    let classes = *shape.last().expect("non-empty shape");
    let rows = logits_self.numel() / classes;
    let p = logits_self.softmax_temp(tau)?;
    let log_p = logits_self.log_softmax_temp(tau)?;
    let log_q = logits_peer.detach().log_softmax_temp(tau)?;
    Ok(p
        .mul(&log_p.sub(&log_q)?)?
        .sum_all()
        .mul_scalar(E::from_f64(1.0 / rows as f64)))
}

/// Sum of squared pixel errors divided by the batch size.
pub fn reconstruction_loss<E: Elem>(
    input_image: &Tensor<E>,
    reconstruction: &Tensor<E>,
    batch_size: usize,
) -> Result<Tensor<E>> {
    if input_image.shape() != reconstruction.shape() {
        return Err(MmcError::Shape {
            op: "reconstruction_loss",
            lhs: input_image.shape(),
            rhs: reconstruction.shape(),
        });
    }
    if batch_size == 0 {
        return Err(MmcError::Parameter("batch_size must be >= 1".into()));
    }
    Ok(input_image
        .sub(reconstruction)?
        .square()
        .sum_all()
        .mul_scalar(E::from_f64(1.0 / batch_size as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmcVariant {
    Plain,
    Recon,
    CrossRecon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkRole {
    Rgb,
    Thm,
}

/// Everything one network's per-image loss depends on. For the recon
/// variants, `recon_target` is the image the decoder should reproduce and
/// `reconstruction` the decoder output (cross wiring is the caller's
/// choice of which features fed the decoder).
pub struct LossInputs<'a, E: Elem = f32> {
    pub output: &'a DetectionOutput<E>,
    pub targets: &'a MatchedTargets,
    pub peer_logits: &'a Tensor<E>,
    pub recon_target: Option<&'a Tensor<E>>,
    pub reconstruction: Option<&'a Tensor<E>>,
    pub batch_size: usize,
}

/// Composed loss with every logged component kept alive.
pub struct MmcLoss<E: Elem = f32> {
    pub total: Tensor<E>,
    pub det: DetectionLoss<E>,
    pub kl: Tensor<E>,
    pub rec: Option<Tensor<E>>,
}

/// One network's total: detection + weighted mimicry, plus the variant's
/// reconstruction term. Zero-weighted terms are still computed for logging
/// but skipped in the sum so they cannot perturb the total.
pub fn mmc_total<E: Elem>(
    variant: MmcVariant,
    network: NetworkRole,
    parts: &LossInputs<E>,
    weights: &LossWeights,
) -> Result<MmcLoss<E>> {
    weights.validate()?;
    let det = detection_loss(parts.output, parts.targets, weights)?;
    let mut kl = kl_mimicry(&parts.output.class_logits, parts.peer_logits, weights.tau)?;
    if weights.kl_sum_over_anchors {
        let rows = parts.output.class_logits.shape()[0];
        kl = kl.mul_scalar(E::from_f64(rows as f64));
    }
    if weights.tau_sq_compensation {
        kl = kl.mul_scalar(E::from_f64(weights.tau * weights.tau));
    }
    let lambda_mimicry = match network {
        NetworkRole::Rgb => weights.lambda_rgb,
        NetworkRole::Thm => weights.lambda_thm,
    };
    let rec = match variant {
        MmcVariant::Plain => None,
        MmcVariant::Recon | MmcVariant::CrossRecon => {
            let (target, recon) = match (parts.recon_target, parts.reconstruction) {
                (Some(t), Some(r)) => (t, r),
                _ => {
                    return Err(MmcError::Config(format!(
                        "{variant:?} loss needs a reconstruction and its target image"
                    )))
                }
            };
            Some(reconstruction_loss(target, recon, parts.batch_size)?)
        }
    };
    let lambda_rec = match (variant, network) {
        (MmcVariant::Plain, _) => 0.0,
        (MmcVariant::Recon, _) => weights.lambda_rec,
        (MmcVariant::CrossRecon, NetworkRole::Rgb) => weights.lambda_crossrec_rgb,
        (MmcVariant::CrossRecon, NetworkRole::Thm) => weights.lambda_crossrec_thm,
    };
    let mut total = det.total.clone();
    if lambda_mimicry != 0.0 {
        total = total.add(&kl.mul_scalar(E::from_f64(lambda_mimicry)))?;
    }
    if let Some(rec) = &rec {
        if lambda_rec != 0.0 {
            total = total.add(&rec.mul_scalar(E::from_f64(lambda_rec)))?;
        }
    }
    Ok(MmcLoss { total, det, kl, rec })
}
