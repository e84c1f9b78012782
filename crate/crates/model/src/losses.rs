//! Training objectives on tensors.
//!
//! Segmentation terms take `N x ...` tensors and reduce over everything but
//! the batch dimension, returning one value per image.

use rfn_core::matching::AnchorLabel;
use tch::{Kind, Reduction, Tensor};

use crate::error::{Error, Result};

/// Smoothing in the dice ratio and in the false-negative/false-positive
/// coefficient denominators.
pub const EPS: f64 = 1e-6;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

fn per_image_sum(t: &Tensor) -> Tensor {
    let n = t.size()[0];
    t.reshape([n, -1]).sum_dim_intlist(1, false, None)
}

fn check_shapes(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.size() != gt.size() || pred.dim() < 1 {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.size(), gt.size())));
    }
    Ok(())
}

/// `1 - (2 Σ ω ω* + ε) / (Σ ω + Σ ω* + ε)`, `ω` the mask and `ω*` the map.
pub fn dice_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_shapes(pred, gt)?;
    let inter = per_image_sum(&(pred * gt));
    let denom = per_image_sum(pred) + per_image_sum(gt) + EPS;
    Ok(1.0 - (inter * 2.0 + EPS) / denom)
}

/// `(D_a, D_b)`: mass of false negatives and false positives, each relative
/// to the predicted foreground mass. The `|ω - ω*| >= 1/2` indicators are
/// constants for backpropagation.
pub fn fn_fp_coeffs(pred: &Tensor, gt: &Tensor) -> Result<(Tensor, Tensor)> {
    check_shapes(pred, gt)?;
    let diff = (gt - pred).detach();
    let false_neg = diff.ge(0.5).to_kind(pred.kind());
    let false_pos = diff.le(-0.5).to_kind(pred.kind());
    let denom = per_image_sum(pred) + EPS;
    let d_a = per_image_sum(&(false_neg * (1.0 - pred))) / &denom;
    let d_b = per_image_sum(&(false_pos * pred)) / &denom;
    Ok((d_a, d_b))
}

/// Tolerated false-positive level: `scale * Σ ω / (Σ ω* + ε)`.
pub fn delta(pred: &Tensor, gt: &Tensor, scale: f64) -> Tensor {
    per_image_sum(gt) * scale / (per_image_sum(pred) + EPS)
}

/// Per-image components of the segmentation loss.
#[derive(Debug)]
pub struct SegLossBreakdown {
    pub dice: Tensor,
    pub fn_coeff: Tensor,
    pub fp_coeff: Tensor,
    pub guard: Tensor,
    pub total: Tensor,
    pub delta: Tensor,
    pub gamma: f64,
}

/// `L_d + e^{-γ L_d} L_g` where `L_g = D_a` while `D_b < Δ` and
/// `D_a + D_b - Δ` otherwise.
pub fn seg_loss(pred: &Tensor, gt: &Tensor, gamma: f64, delta_scale: f64) -> Result<SegLossBreakdown> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Config(format!("segmentation gamma must be > 0, got {gamma}")));
    }
    let dice = dice_loss(pred, gt)?;
    let (fn_coeff, fp_coeff) = fn_fp_coeffs(pred, gt)?;
    let delta = delta(pred, gt, delta_scale);
    let over = fp_coeff.ge_tensor(&delta).detach().to_kind(pred.kind());
    let guard = &fn_coeff + over * (&fp_coeff - &delta);
    let total = &dice + (&dice * -gamma).exp() * &guard;
    Ok(SegLossBreakdown {
        dice,
        fn_coeff,
        fp_coeff,
        guard,
        total,
        delta,
        gamma,
    })
}

/// Elementwise α-balanced focal loss of probabilities against {0, 1} labels.
pub fn focal_loss(prob: &Tensor, label: &Tensor, alpha: f64, gamma: f64) -> Tensor {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pos: Tensor = (-&p + 1.0).pow_tensor_scalar(gamma) * p.log() * -alpha;
    let neg: Tensor = p.pow_tensor_scalar(gamma) * (-&p + 1.0).log() * -(1.0 - alpha);
    label * pos + (1.0 - label) * neg
}

/// Smooth-L1 summed over the last dimension.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Tensor {
    let d = (pred - target).abs();
    let quad = d.lt(1.0).to_kind(d.kind());
    let per = &quad * d.square() * 0.5 + (-&quad + 1.0) * (&d - 0.5);
    per.sum_dim_intlist(-1, false, None)
}

/// What the summed detection loss is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetNormalizer {
    /// Number of non-ignored default boxes.
    Active,
    /// Number of positive default boxes (at least one).
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

/// Detection loss over a flat list of default boxes.
///
/// `probs` is `[A]`, `offsets` `[A, 8]`; `labels` and `targets` come from
/// the anchor assignment. Regression counts positives only, classification
/// positives and negatives.
pub fn detection_loss(
    probs: &Tensor,
    offsets: &Tensor,
    labels: &[AnchorLabel],
    targets: &[[f64; 8]],
    focal: FocalParams,
    normalizer: DetNormalizer,
) -> Result<Tensor> {
    if targets.len() != labels.len() {
        return Err(Error::Shape(format!("{} labels but {} targets", labels.len(), targets.len())));
    }
    let codes: Vec<u8> = labels
        .iter()
        .map(|l| match l {
            AnchorLabel::Negative => 0,
            AnchorLabel::Positive => 1,
            AnchorLabel::Ignore => 2,
        })
        .collect();
    let positives: Vec<(usize, [f64; 8])> =
        (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Positive).map(|i| (i, targets[i])).collect();
    detection_loss_parts(probs, offsets, &codes, &positives, focal, normalizer)
}

/// [`detection_loss`] on compact labels: `codes[i]` is 0 (negative),
/// 1 (positive) or 2 (ignored); `positives` lists `(index, target)`.
pub fn detection_loss_parts(
    probs: &Tensor,
    offsets: &Tensor,
    codes: &[u8],
    positives: &[(usize, [f64; 8])],
    focal: FocalParams,
    normalizer: DetNormalizer,
) -> Result<Tensor> {
    let n = codes.len() as i64;
    if probs.size() != [n] || offsets.size() != [n, 8] {
        return Err(Error::Shape(format!(
            "{n} labels for scores {:?} and offsets {:?}",
            probs.size(),
            offsets.size()
        )));
    }
    let device = probs.device();
    let kind = probs.kind();
    let num_active = codes.iter().filter(|&&c| c != 2).count();
    if num_active == 0 {
        return Err(Error::Degenerate("no non-ignored default boxes".into()));
    }
    let active: Vec<f32> = codes.iter().map(|&c| f32::from(c != 2)).collect();
    let label: Vec<f32> = codes.iter().map(|&c| f32::from(c == 1)).collect();
    let active = Tensor::from_slice(&active).to_kind(kind).to_device(device);
    let label = Tensor::from_slice(&label).to_kind(kind).to_device(device);
    let cls = (focal_loss(probs, &label, focal.alpha, focal.gamma) * active).sum(kind);
    let reg = if positives.is_empty() {
        Tensor::zeros([], (kind, device))
    } else {
        let idx: Vec<i64> = positives.iter().map(|p| p.0 as i64).collect();
        let tgt: Vec<f64> = positives.iter().flat_map(|p| p.1).collect();
        let idx = Tensor::from_slice(&idx).to_device(device);
        let tgt = Tensor::from_slice(&tgt).view([positives.len() as i64, 8]).to_kind(kind).to_device(device);
        smooth_l1(&offsets.index_select(0, &idx), &tgt).sum(kind)
    };
    let m = match normalizer {
        DetNormalizer::Active => num_active,
        DetNormalizer::Positive => positives.len().max(1),
    };
    Ok((cls + reg) / m as f64)
}

/// Refinement loss on sampled regions: mean binary cross-entropy plus
/// smooth-L1 over positives, both divided by the number of regions.
pub fn refine_loss(logits: &Tensor, offsets: &Tensor, labels: &[bool], targets: &[[f64; 8]]) -> Result<Tensor> {
    let k = labels.len() as i64;
    if logits.size() != [k] || offsets.size() != [k, 8] || targets.len() != labels.len() {
        return Err(Error::Shape(format!("{k} region labels for logits {:?}", logits.size())));
    }
    if k == 0 {
        return Err(Error::Degenerate("no sampled regions".into()));
    }
    let kind = logits.kind();
    let device = logits.device();
    let y: Vec<f32> = labels.iter().map(|&b| f32::from(b)).collect();
    let y = Tensor::from_slice(&y).to_kind(kind).to_device(device);
    let bce = logits.binary_cross_entropy_with_logits::<Tensor>(&y, None, None, Reduction::Mean);
    let pos: Vec<i64> = (0..k).filter(|&i| labels[i as usize]).collect();
    if pos.is_empty() {
        return Ok(bce);
    }
    let idx = Tensor::from_slice(&pos).to_device(device);
    let tgt: Vec<f64> = pos.iter().flat_map(|&i| targets[i as usize]).collect();
    let tgt = Tensor::from_slice(&tgt).view([pos.len() as i64, 8]).to_kind(kind).to_device(device);
    Ok(bce + smooth_l1(&offsets.index_select(0, &idx), &tgt).sum(kind) / k as f64)
}

/// `λ1 L_seg + λ2 L_det + λ3 L_ref`.
pub fn total_loss(l_seg: &Tensor, l_det: &Tensor, l_ref: &Tensor, lambdas: [f64; 3]) -> Tensor {
    l_seg * lambdas[0] + l_det * lambdas[1] + l_ref * lambdas[2]
}

/// Scalar mean of a per-image tensor.
pub fn batch_mean(t: &Tensor) -> Tensor {
    t.mean(Kind::Double).to_kind(t.kind())
}
