//! Targeted PGD on the visual modality: relabel one class's instances to
//! background, then descend the detection loss on those modified targets
//! within an L∞ ball, clipping to [0,1] at every iterate.

use crate::data::Sample;
use crate::error::{MmcError, Result};
use crate::eval::{class_recall, evaluate_predictions, EVAL_NMS_IOU, EVAL_SCORE_THRESHOLD};
use crate::geom::BoxCwh;
use crate::losses::{detection_loss, match_anchors, LossWeights};
use crate::nn::{decode_detections, AnchorSet, Detection};
use crate::tensor::Tensor;
use crate::train::{Model, Variant};

/// Targeted-attack parameters. `epsilon` and the step size live on the
/// [0,1] pixel scale (e.g. 8/255).
#[derive(Clone, Copy, Debug)]
pub struct AttackSpec {
    /// Instances of this class are relabeled to background in the target.
    pub hidden_class: usize,
    pub epsilon: f32,
    /// Defaults to epsilon / 4 when unset.
    pub step_size: Option<f32>,
    pub iterations: usize,
    /// Seed for a uniform random start inside the ε ball; None starts from
    /// the clean image.
    pub random_start: Option<u64>,
}

impl AttackSpec {
    pub fn new(hidden_class: usize, epsilon: f32) -> AttackSpec {
        AttackSpec {
            hidden_class,
            epsilon,
            step_size: None,
            iterations: 10,
            random_start: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(MmcError::Parameter(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(MmcError::Parameter("iterations must be >= 1".into()));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0) || !a.is_finite() {
                return Err(MmcError::Parameter(format!(
                    "step_size must be > 0, got {a}"
                )));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f32 {
        self.step_size.unwrap_or(self.epsilon / 4.0)
    }
}

/// The standard epsilon grid {1, 2, 4, 8, 16}/255.
pub fn epsilon_grid() -> [f32; 5] {
    [1.0, 2.0, 4.0, 8.0, 16.0].map(|k| k / 255.0)
}

/// Ground truth with the hidden class's instances dropped (anchors that
/// covered them fall back to the background label).
pub fn hide_class(
    boxes: &[crate::data::Annotation],
    hidden_class: usize,
) -> Vec<(BoxCwh, usize)> {
    boxes
        .iter()
        .filter(|a| a.class_id != hidden_class)
        .map(|a| (a.bbox, a.class_id))
        .collect()
}

pub struct AttackResult {
    pub adversarial: Tensor<f32>,
    /// adversarial − original
    pub perturbation: Tensor<f32>,
    /// max |δ| after each iterate (the ε-ball contract must hold at every
    /// entry, not just the last).
    pub linf_per_iter: Vec<f32>,
    /// Modified-target loss observed at each iterate, before its step.
    pub loss_per_iter: Vec<f32>,
}

/// Run targeted PGD on one sample's visual image. With ε = 0 the image is
/// returned untouched, bit for bit.
pub fn pgd_targeted(
    model: &Model,
    sample: &Sample,
    attack: &AttackSpec,
    weights: &LossWeights,
) -> Result<AttackResult> {
    attack.validate()?;
    if model.variant == Variant::Thermal {
        return Err(MmcError::Config(
            "the attack perturbs the visual modality, which the 'thermal' variant never reads"
                .into(),
        ));
    }
    let anchors = AnchorSet::default_64();
    let x0 = sample.image_a.to_tensor();
    let shape = x0.shape();
    let x0_data = x0.to_vec();
    let b = sample.image_b.to_tensor();
    let targets = match_anchors(&anchors, &hide_class(&sample.boxes, attack.hidden_class));
    let alpha = attack.alpha();

    let mut x_data = x0_data.clone();
    let mut linf_per_iter = Vec::new();
    let mut loss_per_iter = Vec::new();
    if attack.epsilon > 0.0 {
        if let Some(seed) = attack.random_start {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "attack/start", &[]);
            for (v, &v0) in x_data.iter_mut().zip(x0_data.iter()) {
                let lo = (v0 - attack.epsilon).max(0.0);
                let hi = (v0 + attack.epsilon).min(1.0);
                *v = (v0 + attack.epsilon * (rng.gen::<f32>() * 2.0 - 1.0)).clamp(lo, hi);
            }
        }
        for _ in 0..attack.iterations {
            let x = Tensor::from_vec(&shape, x_data.clone())?.with_grad();
            let out = model.output_from(Some(&x), Some(&b))?;
            let dl = detection_loss(&out, &targets, weights)?;
            dl.total.backward()?;
            loss_per_iter.push(dl.total.item());
            let grad = x.grad_vec().ok_or_else(|| {
                MmcError::Contract(
                    "input image received no gradient from the detection loss".into(),
                )
            })?;
            let mut linf: f32 = 0.0;
            for i in 0..x_data.len() {
                let step = alpha * sign(grad[i]);
                let lo = (x0_data[i] - attack.epsilon).max(0.0);
                let hi = (x0_data[i] + attack.epsilon).min(1.0);
                x_data[i] = (x_data[i] - step).clamp(lo, hi);
                linf = linf.max((x_data[i] - x0_data[i]).abs());
            }
            linf_per_iter.push(linf);
        }
    }
    let perturbation: Vec<f32> = x_data
        .iter()
        .zip(x0_data.iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok(AttackResult {
        adversarial: Tensor::from_vec(&shape, x_data)?,
        perturbation: Tensor::from_vec(&shape, perturbation)?,
        linf_per_iter,
        loss_per_iter,
    })
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One row of the attack table.
#[derive(Clone, Copy, Debug)]
pub struct AttackRow {
    pub hidden_class: usize,
    pub epsilon: f32,
    pub map: f64,
    pub hidden_recall: f64,
}

/// Attack every sample at each ε and score the perturbed predictions
/// against the unmodified ground truth.
pub fn attack_sweep(
    model: &Model,
    samples: &[Sample],
    hidden_class: usize,
    epsilons: &[f32],
    weights: &LossWeights,
    n_cls: usize,
) -> Result<Vec<AttackRow>> {
    let anchors = AnchorSet::default_64();
    let mut rows = Vec::new();
    for &epsilon in epsilons {
        let mut preds: Vec<Vec<Detection>> = Vec::with_capacity(samples.len());
        for sample in samples {
            let out = if epsilon == 0.0 {
                model.eval_output(sample)?
            } else {
                let attack = AttackSpec::new(hidden_class, epsilon);
                let result = pgd_targeted(model, sample, &attack, weights)?;
                let b = sample.image_b.to_tensor();
                model.output_from(Some(&result.adversarial), Some(&b))?
            };
            preds.push(decode_detections(
                &out,
                &anchors,
                EVAL_SCORE_THRESHOLD,
                EVAL_NMS_IOU,
            )?);
        }
        let report = evaluate_predictions(samples, &preds, n_cls)?;
        rows.push(AttackRow {
            hidden_class,
            epsilon,
            map: report.map_all(),
            hidden_recall: class_recall(samples, &preds, hidden_class)?,
        });
    }
    Ok(rows)
}

pub const ATTACK_HEADER: &str = "run_id,hidden_class,epsilon,map,hidden_class_recall";

pub fn attack_to_csv(run_id: &str, rows: &[AttackRow]) -> String {
    let mut out = String::from(ATTACK_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            run_id, r.hidden_class, r.epsilon, r.map, r.hidden_recall
        ));
    }
    out
}
