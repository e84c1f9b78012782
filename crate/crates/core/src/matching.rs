//! IoU-based assignment of default boxes to ground-truth boxes.

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{encode_offsets, quad_iou, QuadBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// IoU at or above which an anchor is positive.
    pub pos_iou: f64,
    /// IoU below which an anchor is negative; the band in between is ignored.
    pub neg_iou: f64,
    /// Each non-ignored ground truth additionally claims its best anchor when
    /// that IoU is at least this value, so thin rotated words still get a
    /// positive. `None` disables the rule.
    pub force_best_min_iou: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            pos_iou: 0.5,
            neg_iou: 0.4,
            force_best_min_iou: Some(0.2),
        }
    }
}

/// Per-anchor labels, matched ground-truth index and encoded 8-vector target.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub labels: Vec<AnchorLabel>,
    pub matched_gt: Vec<Option<usize>>,
    pub targets: Vec<[f64; 8]>,
}

impl MatchAssignment {
    /// All anchors labelled negative.
    pub fn all_negative(n: usize) -> Self {
        Self {
            labels: vec![AnchorLabel::Negative; n],
            matched_gt: vec![None; n],
            targets: vec![[0.0; 8]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| **l == AnchorLabel::Positive).count()
    }

    /// M: anchors that take part in the classification loss.
    pub fn num_active(&self) -> usize {
        self.labels.iter().filter(|l| **l != AnchorLabel::Ignore).count()
    }
}

/// Labels every anchor against the ground truth.
///
/// Anchors overlapping an ignore-region label at `neg_iou` or more are
/// ignored unless they are positive for a regular label. Targets are the
/// matched ground truth with corners cyclically aligned to the anchor, then
/// encoded with [`encode_offsets`].
pub fn assign_anchors(anchors: &[QuadBox], gts: &[Annotation], cfg: &MatchConfig) -> Result<MatchAssignment> {
    if !(0.0 < cfg.neg_iou && cfg.neg_iou <= cfg.pos_iou && cfg.pos_iou <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "matching thresholds need 0 < neg ({}) <= pos ({}) <= 1",
            cfg.neg_iou, cfg.pos_iou
        )));
    }
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt: Vec<Option<usize>> = vec![None; n];
    let mut ignore_overlap = vec![false; n];
    let mut forced: Vec<Option<usize>> = vec![None; n];

    let anchor_bounds: Vec<_> = anchors.iter().map(|a| a.bounds()).collect();
    for (g, gt) in gts.iter().enumerate() {
        let gb = gt.quad.bounds();
        let mut gt_best = (0.0f64, None::<usize>);
        for (i, a) in anchors.iter().enumerate() {
            if !anchor_bounds[i].intersects(&gb) {
                continue;
            }
            let iou = quad_iou(a, &gt.quad);
            if iou <= 0.0 {
                continue;
            }
            if gt.ignore {
                if iou >= cfg.neg_iou {
                    ignore_overlap[i] = true;
                }
                continue;
            }
            if iou > best_iou[i] {
                best_iou[i] = iou;
                best_gt[i] = Some(g);
            }
            if iou > gt_best.0 {
                gt_best = (iou, Some(i));
            }
        }
        if let (Some(min), (iou, Some(i))) = (cfg.force_best_min_iou, gt_best) {
            if iou >= min && iou < cfg.pos_iou && forced[i].is_none() {
                forced[i] = Some(g);
            }
        }
    }

    let mut out = MatchAssignment::all_negative(n);
    for i in 0..n {
        let gt_idx = if best_iou[i] >= cfg.pos_iou {
            best_gt[i]
        } else {
            forced[i]
        };
        if let Some(g) = gt_idx {
            let gt = gts[g].quad.clockwise().aligned_to(&anchors[i]);
            out.labels[i] = AnchorLabel::Positive;
            out.matched_gt[i] = Some(g);
            out.targets[i] = encode_offsets(&anchors[i], &gt)?;
        } else if best_iou[i] >= cfg.neg_iou || ignore_overlap[i] {
            out.labels[i] = AnchorLabel::Ignore;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::decode_offsets;

    fn anno(q: QuadBox, t: &str) -> Annotation {
        Annotation::new(q, t).unwrap()
    }

    #[test]
    fn labels_by_threshold() {
        let gt = QuadBox::rect(0.0, 0.0, 10.0, 10.0).unwrap();
        let anchors = vec![
            gt,
            QuadBox::rect(2.5, 0.0, 12.5, 10.0).unwrap(), // 0.6
            QuadBox::rect(4.0, 0.0, 14.0, 10.0).unwrap(), // 0.4286
            QuadBox::rect(7.0, 0.0, 17.0, 10.0).unwrap(), // 0.176
        ];
        let cfg = MatchConfig {
            force_best_min_iou: None,
            ..Default::default()
        };
        let m = assign_anchors(&anchors, &[anno(gt, "A1")], &cfg).unwrap();
        use AnchorLabel::*;
        assert_eq!(m.labels, vec![Positive, Positive, Ignore, Negative]);
        assert_eq!(m.targets[0], [0.0; 8]);
        assert_eq!(m.num_active(), 3);
        let back = decode_offsets(&anchors[1], &m.targets[1]).unwrap();
        for (a, b) in back.corners().iter().zip(gt.corners()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_best_anchor() {
        let gt = QuadBox::rotated_rect(20.0, 20.0, 40.0, 6.0, 0.3).unwrap();
        let anchors = vec![QuadBox::rect(0.0, 17.0, 40.0, 23.0).unwrap(), QuadBox::rect(200.0, 200.0, 210.0, 210.0).unwrap()];
        let iou = quad_iou(&anchors[0], &gt);
        assert!(iou > 0.2 && iou < 0.4, "{iou}");
        let m = assign_anchors(&anchors, &[anno(gt, "A1")], &MatchConfig::default()).unwrap();
        assert_eq!(m.labels[0], AnchorLabel::Positive);
        assert_eq!(m.labels[1], AnchorLabel::Negative);
    }

    #[test]
    fn ignore_regions() {
        let gt = QuadBox::rect(0.0, 0.0, 10.0, 10.0).unwrap();
        let m = assign_anchors(&[gt], &[anno(gt, "###")], &MatchConfig::default()).unwrap();
        assert_eq!(m.labels, vec![AnchorLabel::Ignore]);
        assert_eq!(m.num_active(), 0);
    }
}
