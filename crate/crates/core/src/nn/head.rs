//! Anchor detection head and the decoding from raw head output to scored,
//! suppressed detections.

use rand_chacha::ChaCha8Rng;

use super::{AnchorSet, Conv2dLayer, NamedParams};
use crate::error::{MmcError, Result};
use crate::geom::{iou, BoxCwh};
use crate::tensor::{Elem, Tensor};

/// Raw per-anchor predictions, anchor order as defined by the anchor set.
/// Background is class-logit index 0; foreground classes are 1..=n_cls.
pub struct DetectionOutput<E: Elem = f32> {
    pub class_logits: Tensor<E>, // [A, n_cls+1]
    pub box_deltas: Tensor<E>,   // [A, 4]
}

/// One decoded, suppressed detection.
#[derive(Clone, Debug)]
pub struct Detection {
    pub bbox: BoxCwh,
    /// 1..=n_cls (never background)
    pub class_id: usize,
    pub score: f32,
}

/// One 3×3 convolution per scale predicting `(n_cls+1) + 4` numbers per
/// anchor; outputs concatenated scale-major in anchor order.
pub struct DetectionHead<E: Elem = f32> {
    convs: Vec<Conv2dLayer<E>>,
    pub per_cell: usize,
    pub n_cls: usize,
}

impl<E: Elem> DetectionHead<E> {
    pub fn new(
        n_scales: usize,
        in_ch: usize,
        per_cell: usize,
        n_cls: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let out_ch = per_cell * (n_cls + 1 + 4);
        DetectionHead {
            convs: (0..n_scales)
                .map(|_| Conv2dLayer::new(in_ch, out_ch, 3, 1, 1, rng))
                .collect(),
            per_cell,
            n_cls,
        }
    }

    pub fn forward(&self, maps: &[Tensor<E>]) -> Result<DetectionOutput<E>> {
        if maps.len() != self.convs.len() {
            return Err(MmcError::Config(format!(
                "{} feature maps into a {}-scale head",
                maps.len(),
                self.convs.len()
            )));
        }
        let fields = self.n_cls + 1 + 4;
        let mut logit_parts = Vec::with_capacity(maps.len());
        let mut delta_parts = Vec::with_capacity(maps.len());
        for (map, conv) in maps.iter().zip(&self.convs) {
            let y = conv.forward(map)?; // [per_cell*fields, H, W]
            let s = y.shape();
            let (h, w) = (s[1], s[2]);
            // channel c = a*fields + f  ->  rows ordered (cell row-major, anchor)
            let rows = y
                .reshape(&[self.per_cell, fields, h, w])?
                .permute(&[2, 3, 0, 1])?
                .reshape(&[h * w * self.per_cell, fields])?;
            logit_parts.push(rows.narrow(1, 0, self.n_cls + 1)?);
            delta_parts.push(rows.narrow(1, self.n_cls + 1, 4)?);
        }
        let lrefs: Vec<&Tensor<E>> = logit_parts.iter().collect();
        let drefs: Vec<&Tensor<E>> = delta_parts.iter().collect();
        Ok(DetectionOutput {
            class_logits: Tensor::concat(&lrefs, 0)?,
            box_deltas: Tensor::concat(&drefs, 0)?,
        })
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<E>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect(&format!("{prefix}.scale{i}"), out);
        }
    }
}

/// Softmax the logits, decode deltas against anchors, and greedily suppress
/// per class. Score ties break toward the lower anchor index, which makes
/// the result independent of candidate arrival order.
pub fn decode_detections<E: Elem>(
    output: &DetectionOutput<E>,
    anchors: &AnchorSet,
    score_threshold: f32,
    nms_iou: f32,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&score_threshold) || !(0.0..=1.0).contains(&nms_iou) {
        return Err(MmcError::Parameter(format!(
            "thresholds must lie in [0,1]: score {score_threshold}, nms {nms_iou}"
        )));
    }
    let ls = output.class_logits.shape();
    let a = anchors.len();
    if ls[0] != a || output.box_deltas.shape() != [a, 4] {
        return Err(MmcError::Shape {
            op: "decode_detections",
            lhs: ls,
            rhs: vec![a, 4],
        });
    }
    let n_classes = ls[1]; // background + foreground
    let logits = output.class_logits.data();
    let deltas = output.box_deltas.data();

    // per-anchor class probabilities (plain softmax, temperature 1)
    let mut probs = vec![0.0f32; a * n_classes];
    for i in 0..a {
        let row = &logits[i * n_classes..(i + 1) * n_classes];
        let m = row.iter().cloned().fold(row[0], E::max);
        let mut s = E::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[i * n_classes + j] = e.to_f64() as f32;
            s = s + e;
        }
        let sf = s.to_f64() as f32;
        for j in 0..n_classes {
            probs[i * n_classes + j] /= sf;
        }
    }

    let mut out = Vec::new();
    for cls in 1..n_classes {
        let mut cands: Vec<(f32, usize, BoxCwh)> = Vec::new();
        for i in 0..a {
            let score = probs[i * n_classes + cls];
            if score > score_threshold {
                let d = [
                    deltas[i * 4].to_f64() as f32,
                    deltas[i * 4 + 1].to_f64() as f32,
                    deltas[i * 4 + 2].to_f64() as f32,
                    deltas[i * 4 + 3].to_f64() as f32,
                ];
                cands.push((score, i, AnchorSet::decode_box(anchors.get(i), &d)));
            }
        }
        cands.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .expect("finite scores")
                .then(x.1.cmp(&y.1))
        });
        let mut kept: Vec<(f32, usize, BoxCwh)> = Vec::new();
        'cand: for c in cands {
            for k in &kept {
                if iou(&c.2, &k.2) > nms_iou {
                    continue 'cand;
                }
            }
            kept.push(c);
        }
        out.extend(kept.into_iter().map(|(score, _, bbox)| Detection {
            bbox,
            class_id: cls,
            score,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rng() -> ChaCha8Rng {
        crate::rng::stream(7, "head-tests", &[])
    }

    fn default_head_output() -> (DetectionOutput<f32>, AnchorSet) {
        let anchors = AnchorSet::default_64();
        let mut r = rng();
        let enc = super::super::Encoder::<f32>::new(Default::default(), &mut r).unwrap();
        let head = DetectionHead::new(3, 64, 3, 3, &mut r);
        let maps = enc.encode(&Tensor::zeros(&[3, 64, 64])).unwrap();
        (head.forward(&maps).unwrap(), anchors)
    }

    #[test]
    fn default_output_covers_252_anchors() {
        let (out, anchors) = default_head_output();
        assert_eq!(anchors.len(), 252);
        assert_eq!(out.class_logits.shape(), vec![252, 4]);
        assert_eq!(out.box_deltas.shape(), vec![252, 4]);
    }

    #[test]
    fn zero_weight_head_outputs_zero() {
        let mut r = rng();
        let head: DetectionHead<f32> = DetectionHead::new(3, 8, 3, 3, &mut r);
        for c in &head.convs {
            c.w.set_data(&vec![0.0; c.w.numel()]).unwrap();
            c.b.set_data(&vec![0.0; c.b.numel()]).unwrap();
        }
        let maps = [
            Tensor::full(&[8, 8, 8], 0.5),
            Tensor::full(&[8, 4, 4], 0.5),
            Tensor::full(&[8, 2, 2], 0.5),
        ];
        let out = head.forward(&maps).unwrap();
        assert!(out.class_logits.to_vec().iter().all(|&v| v == 0.0));
        assert!(out.box_deltas.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_is_deterministic() {
        let (a, _) = default_head_output();
        let (b, _) = default_head_output();
        assert_eq!(a.class_logits.to_vec(), b.class_logits.to_vec());
        assert_eq!(a.box_deltas.to_vec(), b.box_deltas.to_vec());
    }

    #[test]
    fn scale_count_mismatch_is_config_error() {
        let mut r = rng();
        let head: DetectionHead<f32> = DetectionHead::new(3, 8, 3, 3, &mut r);
        let maps = [Tensor::zeros(&[8, 8, 8])];
        assert!(matches!(
            head.forward(&maps),
            Err(MmcError::Config(_))
        ));
    }

    /// Hand-built output: logits chosen so specific anchors fire.
    fn synthetic_output(
        anchors: &AnchorSet,
        hot: &[(usize, usize, f32)], // (anchor, class, logit)
        deltas: &[(usize, [f32; 4])],
    ) -> DetectionOutput<f32> {
        let a = anchors.len();
        let mut logits = vec![0.0f32; a * 4];
        for &(i, c, v) in hot {
            logits[i * 4 + c] = v;
        }
        let mut d = vec![0.0f32; a * 4];
        for &(i, dv) in deltas {
            d[i * 4..i * 4 + 4].copy_from_slice(&dv);
        }
        DetectionOutput {
            class_logits: Tensor::from_vec(&[a, 4], logits).unwrap(),
            box_deltas: Tensor::from_vec(&[a, 4], d).unwrap(),
        }
    }

    #[test]
    fn zero_deltas_decode_to_anchor_boxes() {
        let anchors = AnchorSet::default_64();
        let out = synthetic_output(&anchors, &[(10, 1, 8.0)], &[]);
        let dets = decode_detections(&out, &anchors, 0.5, 0.45).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, anchors.get(10).clip_unit());
        assert_eq!(dets[0].class_id, 1);
    }

    #[test]
    fn nms_drops_lower_scoring_duplicate() {
        let anchors = AnchorSet::default_64();
        // anchors 0 and 0's duplicate via anchor 1 regressed onto anchor 0's box
        let d = AnchorSet::encode_box(anchors.get(1), anchors.get(0));
        let out = synthetic_output(&anchors, &[(0, 1, 4.0), (1, 1, 3.0)], &[(1, d)]);
        // threshold above the uniform-softmax floor so only hot anchors fire
        let dets = decode_detections(&out, &anchors, 0.5, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let p0 = {
            // higher logit -> higher softmax score survives
            dets[0].score
        };
        assert!(p0 > 0.5);
    }

    #[test]
    fn score_ties_break_by_anchor_index() {
        let anchors = AnchorSet::default_64();
        // identical logits on two heavily overlapping anchors of one cell
        let d = AnchorSet::encode_box(anchors.get(2), anchors.get(0));
        let out = synthetic_output(&anchors, &[(0, 2, 5.0), (2, 2, 5.0)], &[(2, d)]);
        let dets = decode_detections(&out, &anchors, 0.5, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, anchors.get(0).clip_unit());
    }

    #[test]
    fn decode_reencode_roundtrip_is_stable() {
        let anchors = AnchorSet::default_64();
        let out = synthetic_output(
            &anchors,
            &[(5, 1, 6.0), (100, 2, 7.0), (200, 3, 5.0)],
            &[(5, [0.3, -0.2, 0.5, 0.1]), (100, [-0.4, 0.6, -0.3, 0.2])],
        );
        let dets = decode_detections(&out, &anchors, 0.5, 0.45).unwrap();
        for det in &dets {
            // find the anchor it came from by re-encoding against every anchor
            let mut best = (f32::MAX, 0usize);
            for (i, a) in anchors.iter().enumerate() {
                let d = AnchorSet::encode_box(a, &det.bbox);
                let mag = d.iter().map(|v| v.abs()).sum::<f32>();
                if mag < best.0 {
                    best = (mag, i);
                }
            }
            let redecoded = AnchorSet::decode_box(
                anchors.get(best.1),
                &AnchorSet::encode_box(anchors.get(best.1), &det.bbox),
            );
            assert!((redecoded.cx - det.bbox.cx).abs() < 1e-5);
            assert!((redecoded.w - det.bbox.w).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let anchors = AnchorSet::default_64();
        let out = synthetic_output(&anchors, &[], &[]);
        assert!(matches!(
            decode_detections(&out, &anchors, 1.5, 0.5),
            Err(MmcError::Parameter(_))
        ));
    }
}
