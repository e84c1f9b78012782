//! End-to-end detection: heads, decoding, attention-gated proposals,
//! refinement and re-scored NMS.

use image::RgbImage;
use rfn_core::apr::{binarize_attention, select_candidates, CandidatePool, SelectConfig};
use rfn_core::attention::AttentionMap;
use rfn_core::config::{RoiMode, RunConfig};
use rfn_core::detection::{decode_detections, DetectionSet};
use rfn_core::geometry::{decode_offsets, score_order, QuadBox};
use rfn_core::postprocess::{final_detections, PostprocessConfig, ScoredDetection, ATTENTION_STRIDE};
use tch::{Kind, Tensor};

use crate::data::image_tensor;
use crate::error::{Error, Result};
use crate::model::Rfn;
use crate::refine::{roi_box, roi_features};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub select: SelectConfig,
    pub binarize_threshold: f64,
    pub roi_mode: RoiMode,
    pub post: PostprocessConfig,
    /// Boxes passed on when the refinement stage is absent.
    pub pre_nms_top_k: usize,
    pub max_detections: usize,
}

impl InferConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            select: SelectConfig {
                beta: cfg.apr_beta,
                fallback: cfg.apr_fallback,
            },
            binarize_threshold: cfg.apr_binarize_threshold,
            roi_mode: cfg.apr_roi_mode,
            post: PostprocessConfig {
                mu: cfg.effective_mu(),
                score_floor: cfg.post_score_floor,
                nms_iou: cfg.post_nms_iou,
                attention_stride: ATTENTION_STRIDE,
            },
            pre_nms_top_k: cfg.post_pre_nms_top_k,
            max_detections: cfg.post_max_detections,
        }
    }
}

/// Decodes one image's flattened head outputs into per-level sets.
pub fn level_detections(model: &Rfn, probs: &[f32], offsets: &[f32]) -> Result<Vec<DetectionSet>> {
    let total = model.num_anchors();
    if probs.len() != total || offsets.len() != total * 8 {
        return Err(Error::Shape(format!(
            "{} scores and {} offsets for {total} default boxes",
            probs.len(),
            offsets.len()
        )));
    }
    model
        .level_spans()
        .iter()
        .zip(&model.anchors)
        .map(|(&(start, len), grid)| {
            Ok(decode_detections(&probs[start..start + len], &offsets[start * 8..(start + len) * 8], grid)?)
        })
        .collect()
}

/// `1 x h x w` (or `h x w`) tensor to an attention map.
pub fn attention_map(t: &Tensor) -> Result<AttentionMap> {
    let s = t.size();
    let (h, w) = (s[s.len() - 2] as usize, s[s.len() - 1] as usize);
    let v = Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1))?;
    Ok(AttentionMap::new(h, w, v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect())?)
}

/// Attention-gated candidate pool for one image.
pub fn propose(levels: &[DetectionSet], attention: &AttentionMap, threshold: f64, select: &SelectConfig) -> Result<CandidatePool> {
    let mask = binarize_attention(attention, threshold)?;
    Ok(select_candidates(levels, &mask, select)?)
}

/// Highest-scoring decoded boxes over all levels.
pub fn top_k(levels: &[DetectionSet], k: usize) -> Vec<(f64, QuadBox)> {
    let all: Vec<(f64, QuadBox)> = levels
        .iter()
        .flat_map(|d| d.scores.iter().copied().zip(d.boxes.iter().copied()))
        .collect();
    score_order(all.iter().map(|x| x.0)).into_iter().take(k).map(|i| all[i]).collect()
}

fn usable(q: &QuadBox) -> bool {
    let b = q.bounds();
    b.width() > 1e-3 && b.height() > 1e-3
}

fn flat_f32(t: &Tensor) -> Result<Vec<f32>> {
    Ok(Vec::<f32>::try_from(t.to_kind(Kind::Float).flatten(0, -1))?)
}

/// Runs detection on `N x H x W x 3` images.
pub fn detect_batch(model: &Rfn, images_u8: &Tensor, cfg: &InferConfig) -> Result<Vec<Vec<ScoredDetection>>> {
    tch::no_grad(|| {
        let x = model.preprocess(images_u8);
        let out = model.forward_t(&x, false)?;
        let n = x.size()[0];
        let image_size = (model.config.height, model.config.width);
        let mut results = Vec::with_capacity(n as usize);
        for b in 0..n {
            let probs = flat_f32(&out.logits.get(b).sigmoid())?;
            let offs = flat_f32(&out.offsets.get(b))?;
            let levels = level_detections(model, &probs, &offs)?;
            let attention = attention_map(&out.attention.get(b))?;
            let refined: Vec<(f64, QuadBox)> = match &model.refine {
                Some(net) => {
                    let pool = propose(&levels, &attention, cfg.binarize_threshold, &cfg.select)?;
                    let cands: Vec<QuadBox> = pool.entries.iter().map(|c| c.quad).filter(usable).collect();
                    let dropped = pool.len() - cands.len();
                    if dropped > 0 {
                        log::warn!("dropped {dropped} degenerate candidates");
                    }
                    if cands.is_empty() {
                        Vec::new()
                    } else {
                        let feats: Vec<Tensor> = out.features.iter().map(|f| f.narrow(0, b, 1)).collect();
                        let rois = roi_features(&feats, &[cands.iter().map(roi_box).collect()], image_size, cfg.roi_mode)?;
                        let r = net.forward(&rois);
                        let scores = Vec::<f64>::try_from(r.logits.sigmoid().to_kind(Kind::Double))?;
                        let offs = Vec::<f64>::try_from(r.offsets.to_kind(Kind::Double).flatten(0, -1))?;
                        let mut v = Vec::with_capacity(cands.len());
                        for (i, c) in cands.iter().enumerate() {
                            let o: [f64; 8] = std::array::from_fn(|k| offs[i * 8 + k]);
                            v.push((scores[i], decode_offsets(c, &o)?));
                        }
                        v
                    }
                }
                None => top_k(&levels, cfg.pre_nms_top_k),
            };
            let mut dets = final_detections(&refined, &attention, &cfg.post)?;
            dets.truncate(cfg.max_detections);
            results.push(dets);
        }
        Ok(results)
    })
}

pub fn detect_image(model: &Rfn, image: &RgbImage, cfg: &InferConfig) -> Result<Vec<ScoredDetection>> {
    let (h, w) = (image.height() as i64, image.width() as i64);
    if (h, w) != (model.config.height, model.config.width) {
        return Err(Error::Shape(format!(
            "image is {h}x{w}, model expects {}x{}",
            model.config.height, model.config.width
        )));
    }
    let t = image_tensor(image).unsqueeze(0);
    Ok(detect_batch(model, &t, cfg)?.pop().unwrap_or_default())
}
