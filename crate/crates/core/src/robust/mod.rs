//! Robustness probes: the fifteen natural corruptions and the targeted
//! PGD attack, plus the sweep drivers that turn them into CSV tables.

pub mod attack;
pub mod corruptions;

pub use attack::{
    attack_sweep, attack_to_csv, epsilon_grid, hide_class, pgd_targeted, AttackResult, AttackRow,
    AttackSpec, ATTACK_HEADER,
};
pub use corruptions::{corrupt, tables, CorruptionKind, CorruptionSpec};

use crate::data::Sample;
use crate::error::Result;
use crate::eval::{evaluate_predictions, EvalReport, EVAL_NMS_IOU, EVAL_SCORE_THRESHOLD};
use crate::nn::{decode_detections, AnchorSet, Detection};
use crate::train::Model;

/// Evaluate the model on the clean split and on each corruption applied to
/// the visual modality at `severity`. Row 0 is always ("clean", ...); the
/// fifteen corruption rows follow in [`CorruptionKind::ALL`] order. Each
/// image's corruption stream is keyed by `seed ^ sample.id`.
pub fn corruption_sweep(
    model: &Model,
    samples: &[Sample],
    severity: u8,
    n_cls: usize,
    seed: u64,
) -> Result<Vec<(String, EvalReport)>> {
    let anchors = AnchorSet::default_64();
    let mut rows = Vec::with_capacity(1 + CorruptionKind::ALL.len());

    let mut clean_preds: Vec<Vec<Detection>> = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.eval_output(s)?;
        clean_preds.push(decode_detections(
            &out,
            &anchors,
            EVAL_SCORE_THRESHOLD,
            EVAL_NMS_IOU,
        )?);
    }
    rows.push((
        "clean".to_string(),
        evaluate_predictions(samples, &clean_preds, n_cls)?,
    ));

    for kind in CorruptionKind::ALL {
        let mut preds: Vec<Vec<Detection>> = Vec::with_capacity(samples.len());
        for s in samples {
            let spec = CorruptionSpec {
                kind,
                severity,
                seed: seed ^ s.id,
            };
            let corrupted = corrupt(&s.image_a.to_tensor(), &spec)?;
            let b = s.image_b.to_tensor();
            let out = model.output_from(Some(&corrupted), Some(&b))?;
            preds.push(decode_detections(
                &out,
                &anchors,
                EVAL_SCORE_THRESHOLD,
                EVAL_NMS_IOU,
            )?);
        }
        rows.push((
            kind.as_str().to_string(),
            evaluate_predictions(samples, &preds, n_cls)?,
        ));
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "run_id,corruption,severity,split,map,f1";

/// Serialize sweep rows: per corruption × split, mAP and macro-F1. The
/// clean row is reported as severity 0.
pub fn sweep_to_csv(run_id: &str, severity: u8, rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (name, report) in rows {
        let sev = if name == "clean" { 0 } else { severity };
        for split in &report.splits {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                run_id, name, sev, split.split, split.map, split.macro_f1
            ));
        }
    }
    out
}
