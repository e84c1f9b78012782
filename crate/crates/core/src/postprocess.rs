//! Re-scoring with attention-derived instance scores, then final NMS.

use crate::attention::AttentionMap;
use crate::error::{Error, Result};
use crate::geometry::{rotated_nms, Point, QuadBox};

/// Stride of the attention map relative to the input image.
pub const ATTENTION_STRIDE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub quad: QuadBox,
    pub cls_score: f64,
    pub instance_score: f64,
    pub overall_score: f64,
    pub mu: f64,
}

/// Mean attention over the map pixels whose centres fall inside `quad`
/// (image coordinates, divided by `stride` to reach the map).
pub fn instance_score(quad: &QuadBox, attention: &AttentionMap, stride: f64) -> Result<f64> {
    let q = quad.scaled(1.0 / stride);
    let b = q.bounds();
    let x_lo = (b.x0 - 0.5).ceil().max(0.0) as usize;
    let y_lo = (b.y0 - 0.5).ceil().max(0.0) as usize;
    let x_hi = (b.x1 - 0.5).floor().min(attention.width() as f64 - 1.0);
    let y_hi = (b.y1 - 0.5).floor().min(attention.height() as f64 - 1.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    if x_hi >= 0.0 && y_hi >= 0.0 {
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                if q.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    sum += attention.get(y, x);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::DegenerateBox("box covers no attention pixels".into()));
    }
    Ok(sum / count as f64)
}

/// `S' = e^{S_c} (1 + mu * e^{S_I} / e^{1 - S_I})`.
pub fn rescore(cls_score: f64, instance_score: f64, mu: f64) -> f64 {
    cls_score.exp() * (1.0 + mu * instance_score.exp() / (1.0 - instance_score).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    pub mu: f64,
    pub score_floor: f64,
    pub nms_iou: f64,
    pub attention_stride: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            score_floor: 0.05,
            nms_iou: 0.3,
            attention_stride: ATTENTION_STRIDE,
        }
    }
}

/// Drops boxes under the score floor or covering no attention pixels,
/// re-scores the rest and runs NMS on the overall score.
///
/// Output is sorted by overall score, descending.
pub fn final_detections(
    refined: &[(f64, QuadBox)],
    attention: &AttentionMap,
    cfg: &PostprocessConfig,
) -> Result<Vec<ScoredDetection>> {
    if cfg.mu < 0.0 {
        return Err(Error::InvalidInput(format!("mu must be >= 0, got {}", cfg.mu)));
    }
    let mut survivors = Vec::new();
    for &(cls_score, quad) in refined {
        if cls_score < cfg.score_floor {
            continue;
        }
        let Ok(s_i) = instance_score(&quad, attention, cfg.attention_stride) else {
            continue;
        };
        survivors.push(ScoredDetection {
            quad,
            cls_score,
            instance_score: s_i,
            overall_score: rescore(cls_score, s_i, cfg.mu),
            mu: cfg.mu,
        });
    }
    let keyed: Vec<(QuadBox, f64)> = survivors.iter().map(|d| (d.quad, d.overall_score)).collect();
    let kept = rotated_nms(&keyed, cfg.nms_iou)?;
    Ok(kept.into_iter().map(|i| survivors[i]).collect())
}
