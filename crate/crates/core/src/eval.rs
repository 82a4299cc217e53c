//! Detection metrics: greedy per-class matching, precision–recall curves,
//! all-point-interpolated AP / mAP@0.5, and F1 read off at recall 0.5.

use crate::data::{Annotation, Domain, Sample};
use crate::error::{MmcError, Result};
use crate::geom::iou;
use crate::nn::{decode_detections, AnchorSet, Detection};
use crate::train::Model;

/// Evaluation-time decode defaults.
pub const EVAL_SCORE_THRESHOLD: f32 = 0.05;
pub const EVAL_NMS_IOU: f32 = 0.45;
/// A detection counts as correct at or above this overlap.
pub const MATCH_IOU: f32 = 0.5;

/// Precision–recall curve for one class: one point per distinct score
/// threshold, ordered by descending threshold, plus the ground-truth count.
/// Recall is non-decreasing along the list.
#[derive(Clone, Debug, PartialEq)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
    pub n_gt: usize,
}

/// One ranked detection's matching outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchFlag {
    /// Position of the image in the evaluated list.
    pub image: usize,
    /// Position of the detection within its image's list.
    pub det_index: usize,
    pub score: f32,
    pub tp: bool,
}

/// Greedy matching for one class at `iou_threshold`: detections ranked by
/// descending score (ties: lower image index, then lower detection index)
/// each claim the highest-IoU not-yet-matched truth of the class in their
/// image; a claim below the threshold is a false positive. Returns the
/// ranked flags and the class's ground-truth count.
pub fn match_and_score(
    dets: &[&[Detection]],
    gts: &[&[Annotation]],
    class_id: usize,
    iou_threshold: f32,
) -> Result<(Vec<MatchFlag>, usize)> {
    if dets.len() != gts.len() {
        return Err(MmcError::Contract(format!(
            "detection list covers {} images but ground truth covers {}",
            dets.len(),
            gts.len()
        )));
    }
    let mut ranked: Vec<MatchFlag> = Vec::new();
    for (image, img_dets) in dets.iter().enumerate() {
        for (det_index, d) in img_dets.iter().enumerate() {
            if d.class_id == class_id {
                ranked.push(MatchFlag {
                    image,
                    det_index,
                    score: d.score,
                    tp: false,
                });
            }
        }
    }
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image.cmp(&b.image))
            .then(a.det_index.cmp(&b.det_index))
    });

    // Truth bookkeeping per image: indices of this class plus a taken flag.
    let mut truth_indices: Vec<Vec<usize>> = Vec::with_capacity(gts.len());
    let mut taken: Vec<Vec<bool>> = Vec::with_capacity(gts.len());
    let mut n_gt = 0usize;
    for img_gts in gts {
        let idx: Vec<usize> = (0..img_gts.len())
            .filter(|&i| img_gts[i].class_id == class_id)
            .collect();
        n_gt += idx.len();
        taken.push(vec![false; idx.len()]);
        truth_indices.push(idx);
    }

    for flag in ranked.iter_mut() {
        let d = &dets[flag.image][flag.det_index];
        let candidates = &truth_indices[flag.image];
        let mut best: Option<(usize, f32)> = None;
        for (slot, &ti) in candidates.iter().enumerate() {
            if taken[flag.image][slot] {
                continue;
            }
            let overlap = iou(&d.bbox, &gts[flag.image][ti].bbox);
            // Strict > keeps ties on the earlier (lower-index) truth.
            let better = match best {
                None => true,
                Some((_, b)) => overlap > b,
            };
            if better {
                best = Some((slot, overlap));
            }
        }
        if let Some((slot, overlap)) = best {
            if overlap >= iou_threshold {
                taken[flag.image][slot] = true;
                flag.tp = true;
            }
        }
    }
    Ok((ranked, n_gt))
}

/// Accumulate ranked flags into a PR curve, emitting one point per distinct
/// score (all detections sharing a score enter the curve together, as a
/// threshold sweep would see them).
pub fn pr_curve(flags: &[MatchFlag], n_gt: usize) -> PRCurve {
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (i, f) in flags.iter().enumerate() {
        if f.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = match flags.get(i + 1) {
            Some(next) => next.score.to_bits() != f.score.to_bits(),
            None => true,
        };
        if last_of_score && n_gt > 0 {
            points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    PRCurve { points, n_gt }
}

/// Precision envelope: env[i] = max precision at any point from i on.
fn envelope(points: &[(f64, f64)]) -> Vec<f64> {
    let mut env = vec![0.0; points.len()];
    let mut run: f64 = 0.0;
    for i in (0..points.len()).rev() {
        run = run.max(points[i].1);
        env[i] = run;
    }
    env
}

/// Area under the monotone-interpolated (all-point envelope) PR curve.
pub fn average_precision(curve: &PRCurve) -> f64 {
    if curve.n_gt == 0 || curve.points.is_empty() {
        return 0.0;
    }
    let env = envelope(&curve.points);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in curve.points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * env[i];
            prev_recall = recall;
        }
    }
    ap
}

/// F1 at the first curve point whose recall reaches `target_recall`, using
/// that point's recall and its envelope (monotone-interpolated) precision;
/// 0 when recall never gets there.
pub fn f1_at_recall(curve: &PRCurve, target_recall: f64) -> f64 {
    let env = envelope(&curve.points);
    for (i, &(recall, _)) in curve.points.iter().enumerate() {
        if recall >= target_recall {
            let p = env[i];
            if p + recall == 0.0 {
                return 0.0;
            }
            return 2.0 * p * recall / (p + recall);
        }
    }
    0.0
}

/// Per-class metrics inside one split.
#[derive(Clone, Debug)]
pub struct ClassReport {
    pub class_id: usize,
    /// n_gt > 0; absent classes stay out of the split means.
    pub present: bool,
    pub ap: f64,
    pub f1: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

/// Metrics for one of the three splits.
#[derive(Clone, Debug)]
pub struct SplitReport {
    pub split: &'static str,
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes present in the split's ground truth.
    pub map: f64,
    /// Macro-averaged F1 over the same classes.
    pub macro_f1: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    /// "all", "day", "night" in that order.
    pub splits: Vec<SplitReport>,
}

impl EvalReport {
    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }

    /// mAP of the "all" split.
    pub fn map_all(&self) -> f64 {
        self.split("all").map_or(0.0, |s| s.map)
    }
}

pub fn class_name(class_id: usize) -> String {
    match class_id {
        1 => "person".into(),
        2 => "car".into(),
        3 => "cyclist".into(),
        _ => format!("class{class_id}"),
    }
}

fn split_filter(split: &'static str) -> impl Fn(&Sample) -> bool {
    move |s: &Sample| match split {
        "day" => s.domain == Domain::Day,
        "night" => s.domain == Domain::Night,
        _ => true,
    }
}

/// Score aligned predictions against their samples. `preds[i]` must hold
/// the detections for `samples[i]`.
pub fn evaluate_predictions(
    samples: &[Sample],
    preds: &[Vec<Detection>],
    n_cls: usize,
) -> Result<EvalReport> {
    if samples.len() != preds.len() {
        return Err(MmcError::Contract(format!(
            "{} samples but {} prediction lists",
            samples.len(),
            preds.len()
        )));
    }
    let mut splits = Vec::new();
    for split in ["all", "day", "night"] {
        let keep = split_filter(split);
        let mut dets: Vec<&[Detection]> = Vec::new();
        let mut gts: Vec<&[Annotation]> = Vec::new();
        for (s, p) in samples.iter().zip(preds.iter()) {
            if keep(s) {
                dets.push(p.as_slice());
                gts.push(s.boxes.as_slice());
            }
        }
        let mut classes = Vec::new();
        for class_id in 1..=n_cls {
            let (flags, n_gt) = match_and_score(&dets, &gts, class_id, MATCH_IOU)?;
            let n_det = flags.len();
            let curve = pr_curve(&flags, n_gt);
            classes.push(ClassReport {
                class_id,
                present: n_gt > 0,
                ap: if n_gt > 0 { average_precision(&curve) } else { 0.0 },
                f1: if n_gt > 0 { f1_at_recall(&curve, 0.5) } else { 0.0 },
                n_gt,
                n_det,
            });
        }
        let present: Vec<&ClassReport> = classes.iter().filter(|c| c.present).collect();
        let (map, macro_f1) = if present.is_empty() {
            (0.0, 0.0)
        } else {
            let inv = 1.0 / present.len() as f64;
            (
                present.iter().map(|c| c.ap).sum::<f64>() * inv,
                present.iter().map(|c| c.f1).sum::<f64>() * inv,
            )
        };
        splits.push(SplitReport {
            split,
            n_gt: classes.iter().map(|c| c.n_gt).sum(),
            n_det: classes.iter().map(|c| c.n_det).sum(),
            classes,
            map,
            macro_f1,
        });
    }
    Ok(EvalReport { splits })
}

/// Run the model over every sample (decode at the evaluation thresholds)
/// and score the result.
pub fn evaluate(model: &Model, samples: &[Sample], n_cls: usize) -> Result<EvalReport> {
    let preds = predict_all(model, samples)?;
    evaluate_predictions(samples, &preds, n_cls)
}

/// Per-sample decoded detections at the evaluation thresholds.
pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<Detection>>> {
    let anchors = AnchorSet::default_64();
    samples
        .iter()
        .map(|s| {
            let out = model.eval_output(s)?;
            decode_detections(&out, &anchors, EVAL_SCORE_THRESHOLD, EVAL_NMS_IOU)
        })
        .collect()
}

/// Fraction of a class's ground-truth instances recovered by the
/// predictions (greedy matching at the evaluation IoU). A class with no
/// ground truth is vacuously at recall 1.
pub fn class_recall(
    samples: &[Sample],
    preds: &[Vec<Detection>],
    class_id: usize,
) -> Result<f64> {
    if samples.len() != preds.len() {
        return Err(MmcError::Contract(format!(
            "{} samples but {} prediction lists",
            samples.len(),
            preds.len()
        )));
    }
    let dets: Vec<&[Detection]> = preds.iter().map(|v| v.as_slice()).collect();
    let gts: Vec<&[Annotation]> = samples.iter().map(|s| s.boxes.as_slice()).collect();
    let (flags, n_gt) = match_and_score(&dets, &gts, class_id, MATCH_IOU)?;
    if n_gt == 0 {
        return Ok(1.0);
    }
    Ok(flags.iter().filter(|f| f.tp).count() as f64 / n_gt as f64)
}

pub const REPORT_HEADER: &str = "run_id,variant,split,class,ap,f1,n_gt,n_det";

/// Serialize a report: one row per class per split, then a `mean` summary
/// row per split carrying mAP and macro-F1.
pub fn report_to_csv(run_id: &str, variant: &str, report: &EvalReport) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for split in &report.splits {
        for c in &split.classes {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{},{}\n",
                run_id,
                variant,
                split.split,
                class_name(c.class_id),
                c.ap,
                c.f1,
                c.n_gt,
                c.n_det
            ));
        }
        out.push_str(&format!(
            "{},{},{},mean,{:.6},{:.6},{},{}\n",
            run_id, variant, split.split, split.map, split.macro_f1, split.n_gt, split.n_det
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BoxCwh;
    use rand::Rng;

    fn det(cx: f32, cy: f32, w: f32, h: f32, class_id: usize, score: f32) -> Detection {
        Detection {
            bbox: BoxCwh { cx, cy, w, h },
            class_id,
            score,
        }
    }

    fn gt(cx: f32, cy: f32, w: f32, h: f32, class_id: usize) -> Annotation {
        Annotation {
            class_id,
            bbox: BoxCwh { cx, cy, w, h },
        }
    }

    fn sample_with(boxes: Vec<Annotation>, domain: Domain) -> Sample {
        Sample {
            id: 0,
            image_a: crate::data::Image::new(3, 1, 1),
            image_b: crate::data::Image::new(1, 1, 1),
            boxes,
            domain,
            illumination: 1.0,
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = BoxCwh {
            cx: 1.0,
            cy: 1.0,
            w: 2.0,
            h: 2.0,
        };
        let b = BoxCwh {
            cx: 2.0,
            cy: 2.0,
            w: 2.0,
            h: 2.0,
        };
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-6);
        let far = BoxCwh {
            cx: 10.0,
            cy: 10.0,
            w: 2.0,
            h: 2.0,
        };
        assert_eq!(iou(&a, &far), 0.0);
        let degenerate = BoxCwh {
            cx: 1.0,
            cy: 1.0,
            w: 0.0,
            h: 2.0,
        };
        assert_eq!(iou(&a, &degenerate), 0.0);
    }

    #[test]
    fn single_correct_detection_is_tp_with_ap_one() {
        let dets = vec![vec![det(0.5, 0.5, 0.2, 0.2, 1, 0.9)]];
        let gts = vec![vec![gt(0.5, 0.5, 0.2, 0.2, 1)]];
        let d: Vec<&[Detection]> = dets.iter().map(|v| v.as_slice()).collect();
        let g: Vec<&[Annotation]> = gts.iter().map(|v| v.as_slice()).collect();
        let (flags, n_gt) = match_and_score(&d, &g, 1, 0.5).unwrap();
        assert_eq!(n_gt, 1);
        assert_eq!(flags.len(), 1);
        assert!(flags[0].tp);
        let curve = pr_curve(&flags, n_gt);
        assert_eq!(curve.points, vec![(1.0, 1.0)]);
        assert_eq!(average_precision(&curve), 1.0);
        assert_eq!(f1_at_recall(&curve, 0.5), 1.0);
    }

    #[test]
    fn second_detection_on_same_truth_is_fp() {
        let dets = vec![vec![
            det(0.5, 0.5, 0.2, 0.2, 1, 0.6),
            det(0.51, 0.5, 0.2, 0.2, 1, 0.9),
        ]];
        let gts = vec![vec![gt(0.5, 0.5, 0.2, 0.2, 1)]];
        let d: Vec<&[Detection]> = dets.iter().map(|v| v.as_slice()).collect();
        let g: Vec<&[Annotation]> = gts.iter().map(|v| v.as_slice()).collect();
        let (flags, _) = match_and_score(&d, &g, 1, 0.5).unwrap();
        // Ranked by score: the 0.9 det (index 1) wins the truth.
        assert_eq!(flags[0].det_index, 1);
        assert!(flags[0].tp);
        assert!(!flags[1].tp);
    }

    /// Independent re-implementation: walk ranked detections, scanning all
    /// truths of the image by exhaustive loops.
    fn brute_force_flags(
        dets: &[Vec<Detection>],
        gts: &[Vec<Annotation>],
        class_id: usize,
        thr: f32,
    ) -> Vec<(usize, usize, bool)> {
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (i, v) in dets.iter().enumerate() {
            for (j, d) in v.iter().enumerate() {
                if d.class_id == class_id {
                    order.push((i, j));
                }
            }
        }
        order.sort_by(|&(i1, j1), &(i2, j2)| {
            dets[i2][j2]
                .score
                .total_cmp(&dets[i1][j1].score)
                .then(i1.cmp(&i2))
                .then(j1.cmp(&j2))
        });
        let mut used: Vec<Vec<bool>> = gts.iter().map(|v| vec![false; v.len()]).collect();
        let mut out = Vec::new();
        for (i, j) in order {
            let mut best_k = usize::MAX;
            let mut best_iou = -1.0f32;
            for (k, t) in gts[i].iter().enumerate() {
                if t.class_id != class_id || used[i][k] {
                    continue;
                }
                let o = iou(&dets[i][j].bbox, &t.bbox);
                if o > best_iou {
                    best_iou = o;
                    best_k = k;
                }
            }
            let tp = best_k != usize::MAX && best_iou >= thr;
            if tp {
                used[i][best_k] = true;
            }
            out.push((i, j, tp));
        }
        out
    }

    #[test]
    fn matching_agrees_with_brute_force_on_random_instances() {
        let mut rng = crate::rng::stream(501, "eval-tests/match", &[]);
        for _ in 0..20 {
            let n_images = 3;
            let mut dets: Vec<Vec<Detection>> = Vec::new();
            let mut gts: Vec<Vec<Annotation>> = Vec::new();
            for _ in 0..n_images {
                let mut dv = Vec::new();
                for _ in 0..7 {
                    dv.push(det(
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(1..=2),
                        rng.gen_range(0.01..1.0),
                    ));
                }
                dets.push(dv);
                let mut gv = Vec::new();
                for _ in 0..3 {
                    gv.push(gt(
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(1..=2),
                    ));
                }
                gts.push(gv);
            }
            for class_id in 1..=2 {
                let d: Vec<&[Detection]> = dets.iter().map(|v| v.as_slice()).collect();
                let g: Vec<&[Annotation]> = gts.iter().map(|v| v.as_slice()).collect();
                let (flags, _) = match_and_score(&d, &g, class_id, 0.5).unwrap();
                let oracle = brute_force_flags(&dets, &gts, class_id, 0.5);
                assert_eq!(flags.len(), oracle.len());
                for (f, (i, j, tp)) in flags.iter().zip(oracle.iter()) {
                    assert_eq!((f.image, f.det_index, f.tp), (*i, *j, *tp));
                }
            }
        }
    }

    /// Threshold-sweep oracle: precision/recall evaluated at every distinct
    /// score, envelope-integrated directly.
    fn ap_threshold_sweep(flags: &[MatchFlag], n_gt: usize) -> f64 {
        let mut scores: Vec<f32> = flags.iter().map(|f| f.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        scores.dedup();
        let mut pts = Vec::new();
        for &s in &scores {
            let kept: Vec<&MatchFlag> = flags.iter().filter(|f| f.score >= s).collect();
            let tp = kept.iter().filter(|f| f.tp).count();
            pts.push((
                tp as f64 / n_gt as f64,
                tp as f64 / kept.len() as f64,
            ));
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut ap = 0.0;
        let mut prev = 0.0;
        for i in 0..pts.len() {
            let r = pts[i].0;
            if r > prev {
                let env = pts[i..].iter().map(|p| p.1).fold(0.0f64, f64::max);
                ap += (r - prev) * env;
                prev = r;
            }
        }
        ap
    }

    #[test]
    fn ap_matches_threshold_sweep_oracle() {
        let mut rng = crate::rng::stream(502, "eval-tests/ap", &[]);
        for case in 0..100 {
            let n_gt = rng.gen_range(1..8usize);
            let n_det = rng.gen_range(1..20usize);
            let flags: Vec<MatchFlag> = {
                let mut tp_left = n_gt;
                let mut v: Vec<MatchFlag> = (0..n_det)
                    .map(|i| {
                        let tp = tp_left > 0 && rng.gen_bool(0.5);
                        if tp {
                            tp_left -= 1;
                        }
                        MatchFlag {
                            image: 0,
                            det_index: i,
                            score: rng.gen_range(0.0..1.0),
                            tp,
                        }
                    })
                    .collect();
                v.sort_by(|a, b| b.score.total_cmp(&a.score));
                v
            };
            let curve = pr_curve(&flags, n_gt);
            let got = average_precision(&curve);
            let want = ap_threshold_sweep(&flags, n_gt);
            assert!(
                (got - want).abs() < 1e-6,
                "case {case}: {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn f1_fixtures_at_recall_half() {
        // First point at recall 0.5 with envelope precision 0.5.
        let c1 = PRCurve {
            points: vec![(0.0, 0.0), (0.5, 0.5), (0.5, 1.0 / 3.0)],
            n_gt: 2,
        };
        assert!((f1_at_recall(&c1, 0.5) - 0.5).abs() < 1e-4);
        // Envelope precision 1.0 at recall 0.5.
        let c2 = PRCurve {
            points: vec![(0.5, 1.0), (0.5, 0.5)],
            n_gt: 2,
        };
        assert!((f1_at_recall(&c2, 0.5) - 2.0 / 3.0).abs() < 1e-4);
        // Recall never reaches 0.5.
        let c3 = PRCurve {
            points: vec![(0.25, 1.0)],
            n_gt: 4,
        };
        assert_eq!(f1_at_recall(&c3, 0.5), 0.0);
    }

    #[test]
    fn ap_invariant_to_detection_input_order() {
        let mut rng = crate::rng::stream(503, "eval-tests/order", &[]);
        let gts = vec![vec![
            gt(0.3, 0.3, 0.2, 0.2, 1),
            gt(0.7, 0.7, 0.2, 0.2, 1),
        ]];
        let mut dets0: Vec<Detection> = (0..10)
            .map(|_| {
                det(
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    0.2,
                    0.2,
                    1,
                    rng.gen_range(0.01..1.0),
                )
            })
            .collect();
        let forward = vec![dets0.clone()];
        dets0.reverse();
        let reversed = vec![dets0];
        let g: Vec<&[Annotation]> = gts.iter().map(|v| v.as_slice()).collect();
        let d1: Vec<&[Detection]> = forward.iter().map(|v| v.as_slice()).collect();
        let d2: Vec<&[Detection]> = reversed.iter().map(|v| v.as_slice()).collect();
        let (f1, n1) = match_and_score(&d1, &g, 1, 0.5).unwrap();
        let (f2, n2) = match_and_score(&d2, &g, 1, 0.5).unwrap();
        assert_eq!(
            average_precision(&pr_curve(&f1, n1)),
            average_precision(&pr_curve(&f2, n2))
        );
    }

    #[test]
    fn monotone_score_rescaling_preserves_metrics() {
        let gts = vec![vec![gt(0.3, 0.3, 0.2, 0.2, 1), gt(0.7, 0.7, 0.2, 0.2, 1)]];
        let base = vec![vec![
            det(0.3, 0.3, 0.2, 0.2, 1, 0.9),
            det(0.1, 0.9, 0.2, 0.2, 1, 0.7),
            det(0.7, 0.7, 0.2, 0.2, 1, 0.4),
        ]];
        let squashed: Vec<Vec<Detection>> = base
            .iter()
            .map(|v| {
                v.iter()
                    .map(|d| Detection {
                        score: d.score * 0.5 + 0.1,
                        ..*d
                    })
                    .collect()
            })
            .collect();
        let g: Vec<&[Annotation]> = gts.iter().map(|v| v.as_slice()).collect();
        let d1: Vec<&[Detection]> = base.iter().map(|v| v.as_slice()).collect();
        let d2: Vec<&[Detection]> = squashed.iter().map(|v| v.as_slice()).collect();
        let (f1s, n1) = match_and_score(&d1, &g, 1, 0.5).unwrap();
        let (f2s, n2) = match_and_score(&d2, &g, 1, 0.5).unwrap();
        let c1 = pr_curve(&f1s, n1);
        let c2 = pr_curve(&f2s, n2);
        assert!((average_precision(&c1) - average_precision(&c2)).abs() < 1e-12);
        assert!((f1_at_recall(&c1, 0.5) - f1_at_recall(&c2, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor_scores_one_everywhere() {
        let mut samples = Vec::new();
        let mut preds = Vec::new();
        for i in 0..6 {
            let domain = if i % 2 == 0 { Domain::Day } else { Domain::Night };
            let boxes = vec![
                gt(0.3, 0.3, 0.2, 0.25, 1 + (i % 3)),
                gt(0.7, 0.6, 0.25, 0.2, 1 + ((i + 1) % 3)),
            ];
            preds.push(
                boxes
                    .iter()
                    .map(|b| Detection {
                        bbox: b.bbox,
                        class_id: b.class_id,
                        score: 1.0,
                    })
                    .collect::<Vec<_>>(),
            );
            samples.push(sample_with(boxes, domain));
        }
        let report = evaluate_predictions(&samples, &preds, 3).unwrap();
        for split in &report.splits {
            assert!((split.map - 1.0).abs() < 1e-12, "split {}", split.split);
            assert!((split.macro_f1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_predictions_score_zero() {
        let samples = vec![sample_with(vec![gt(0.5, 0.5, 0.2, 0.2, 1)], Domain::Day)];
        let preds = vec![Vec::new()];
        let report = evaluate_predictions(&samples, &preds, 3).unwrap();
        assert_eq!(report.map_all(), 0.0);
        assert_eq!(report.split("all").unwrap().macro_f1, 0.0);
    }

    #[test]
    fn split_ground_truth_counts_are_consistent() {
        let mut rng = crate::rng::stream(504, "eval-tests/splits", &[]);
        let mut samples = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..12 {
            let domain = if rng.gen_bool(0.5) { Domain::Day } else { Domain::Night };
            let n = rng.gen_range(0..4usize);
            let boxes: Vec<Annotation> = (0..n)
                .map(|_| {
                    gt(
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.2..0.8),
                        0.2,
                        0.2,
                        rng.gen_range(1..=3),
                    )
                })
                .collect();
            preds.push(Vec::new());
            samples.push(sample_with(boxes, domain));
        }
        let report = evaluate_predictions(&samples, &preds, 3).unwrap();
        let all = report.split("all").unwrap().n_gt;
        let day = report.split("day").unwrap().n_gt;
        let night = report.split("night").unwrap().n_gt;
        assert_eq!(all, day + night);
    }

    /// Ten-image fixture scored by hand:
    /// - class 1 (person): 4 truths; detections .9 TP, .8 FP, .7 TP, .6 FP
    ///   → curve (.25,1), (.25,.5), (.5,2/3), (.5,.5)
    ///   → AP = .25·1 + .25·(2/3) = 5/12; F1 at (.5, env 2/3) = 4/7.
    /// - class 2 (car): 2 truths; one perfect detection at .95
    ///   → AP = .5; F1 at (.5, 1) = 2/3.
    /// - class 3 (cyclist): absent from truth, one stray detection:
    ///   excluded from the means.
    /// mAP = (5/12 + 1/2)/2 = 11/24.
    #[test]
    fn ten_image_fixture_matches_hand_scored_report() {
        let mut samples: Vec<Sample> = Vec::new();
        let mut preds: Vec<Vec<Detection>> = Vec::new();
        for i in 0..10 {
            let mut boxes = Vec::new();
            let mut p = Vec::new();
            match i {
                0 => {
                    boxes.push(gt(0.3, 0.3, 0.2, 0.2, 1));
                    p.push(det(0.3, 0.3, 0.2, 0.2, 1, 0.9)); // TP
                }
                1 => {
                    boxes.push(gt(0.4, 0.4, 0.2, 0.2, 1));
                    p.push(det(0.8, 0.8, 0.2, 0.2, 1, 0.8)); // FP (off target)
                }
                2 => {
                    boxes.push(gt(0.5, 0.5, 0.2, 0.2, 1));
                    p.push(det(0.5, 0.5, 0.2, 0.2, 1, 0.7)); // TP
                }
                3 => {
                    boxes.push(gt(0.6, 0.6, 0.2, 0.2, 1));
                    p.push(det(0.1, 0.1, 0.2, 0.2, 1, 0.6)); // FP
                }
                4 => {
                    boxes.push(gt(0.3, 0.7, 0.2, 0.2, 2));
                    p.push(det(0.3, 0.7, 0.2, 0.2, 2, 0.95)); // TP
                }
                5 => {
                    boxes.push(gt(0.7, 0.3, 0.2, 0.2, 2)); // unmatched car
                }
                6 => {
                    p.push(det(0.5, 0.5, 0.2, 0.2, 3, 0.5)); // stray cyclist det
                }
                _ => {}
            }
            samples.push(sample_with(boxes, Domain::Day));
            preds.push(p);
        }
        let report = evaluate_predictions(&samples, &preds, 3).unwrap();
        let all = report.split("all").unwrap();
        let c1 = &all.classes[0];
        assert!((c1.ap - 5.0 / 12.0).abs() < 1e-9, "person AP {}", c1.ap);
        assert!((c1.f1 - 4.0 / 7.0).abs() < 1e-9, "person F1 {}", c1.f1);
        assert_eq!((c1.n_gt, c1.n_det), (4, 4));
        let c2 = &all.classes[1];
        assert!((c2.ap - 0.5).abs() < 1e-9);
        assert!((c2.f1 - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!((c2.n_gt, c2.n_det), (2, 1));
        let c3 = &all.classes[2];
        assert!(!c3.present);
        assert_eq!((c3.n_gt, c3.n_det), (0, 1));
        assert!((all.map - 11.0 / 24.0).abs() < 1e-9, "mAP {}", all.map);
        // Night split has no ground truth at all.
        assert_eq!(report.split("night").unwrap().n_gt, 0);
        assert_eq!(report.split("night").unwrap().map, 0.0);

        let csv = report_to_csv("r1", "rgb", &report);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        // 3 classes + 1 summary row per split, 3 splits.
        assert_eq!(lines.count(), 3 * 4);
        assert!(csv.contains("r1,rgb,all,person,"));
        assert!(csv.contains("r1,rgb,all,mean,"));
    }
}
