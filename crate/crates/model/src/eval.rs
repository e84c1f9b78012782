//! Running a model over a labelled set and scoring it.

use rfn_core::annotation::ScoredQuad;
use rfn_core::evalkit::{match_detections, matched_count_at, pr_curve, prf, EvalImage, EvalRecord, PrPoint, Prf};
use tch::Tensor;

use crate::data::{image_tensor, LabelledImage};
use crate::error::Result;
use crate::infer::{detect_batch, InferConfig};
use crate::model::Rfn;

/// Thresholds for the matched-box counts.
pub const COUNT_THRESHOLDS: [f64; 2] = [0.6, 0.8];

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub iou: f64,
    pub record: EvalRecord,
    pub prf: Prf,
    pub matched_counts: Vec<(f64, usize)>,
    pub pr_curve: Vec<PrPoint>,
}

pub fn predict_all(model: &Rfn, images: &[LabelledImage], cfg: &InferConfig, batch: usize) -> Result<Vec<Vec<ScoredQuad>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let t = Tensor::stack(&chunk.iter().map(|li| image_tensor(&li.image)).collect::<Vec<_>>(), 0);
        for dets in detect_batch(model, &t, cfg)? {
            out.push(dets.into_iter().map(|d| ScoredQuad { quad: d.quad, score: d.overall_score }).collect());
        }
    }
    Ok(out)
}

/// Scores predictions against labels.
pub fn score(images: &[EvalImage], iou: f64) -> Result<EvalReport> {
    let mut record = EvalRecord::default();
    for (preds, gts) in images {
        record.merge(&match_detections(preds, gts, iou)?);
    }
    Ok(EvalReport {
        iou,
        prf: prf(&record),
        matched_counts: matched_count_at(images, &COUNT_THRESHOLDS)?,
        pr_curve: pr_curve(images, iou)?,
        record,
    })
}

pub fn evaluate(model: &Rfn, images: &[LabelledImage], cfg: &InferConfig, iou: f64) -> Result<EvalReport> {
    let preds = predict_all(model, images, cfg, 8)?;
    let pairs: Vec<EvalImage> = preds.into_iter().zip(images).map(|(p, li)| (p, li.annotations.clone())).collect();
    score(&pairs, iou)
}
