//! ICDAR-style detection evaluation.
//!
//! Predictions are processed in descending score order (ties by index) and
//! matched greedily, one-to-one, to the unmatched regular ground truth with
//! the highest IoU at or above the threshold. A prediction whose best
//! overlap is an ignore-region label (`###`) with IoU >= 0.5 counts as
//! neither true nor false positive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::annotation::{Annotation, ScoredQuad};
use crate::error::{Error, Result};
use crate::geometry::{quad_iou, score_order};

/// IoU with an ignore region above which a prediction is discarded.
pub const IGNORE_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalRecord {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub matches: Vec<Match>,
    pub ignored_preds: usize,
}

impl EvalRecord {
    /// Sums counts over images (match indices stay per-image).
    pub fn merge(&mut self, other: &EvalRecord) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.ignored_preds += other.ignored_preds;
        self.matches.extend_from_slice(&other.matches);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredOutcome {
    Matched { gt: usize, iou: f64 },
    Ignored,
    FalsePositive,
}

/// Outcome for every prediction, in processing (score) order.
fn match_ordered(preds: &[ScoredQuad], gts: &[Annotation], iou_t: f64) -> Vec<(usize, PredOutcome)> {
    let mut gt_taken = vec![false; gts.len()];
    let gt_bounds: Vec<_> = gts.iter().map(|g| g.quad.bounds()).collect();
    let mut out = Vec::with_capacity(preds.len());
    for p in score_order(preds.iter().map(|p| p.score)) {
        let pb = preds[p].quad.bounds();
        let ious: Vec<f64> = gts
            .iter()
            .zip(&gt_bounds)
            .map(|(g, b)| if b.intersects(&pb) { quad_iou(&preds[p].quad, &g.quad) } else { 0.0 })
            .collect();
        let best_any = (0..gts.len()).max_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(b.cmp(&a)));
        if let Some(g) = best_any {
            if gts[g].ignore && ious[g] >= IGNORE_IOU {
                out.push((p, PredOutcome::Ignored));
                continue;
            }
        }
        let best_free = (0..gts.len())
            .filter(|&g| !gts[g].ignore && !gt_taken[g] && ious[g] >= iou_t)
            .max_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(b.cmp(&a)));
        match best_free {
            Some(g) => {
                gt_taken[g] = true;
                out.push((p, PredOutcome::Matched { gt: g, iou: ious[g] }));
            }
            None => out.push((p, PredOutcome::FalsePositive)),
        }
    }
    out
}

fn validate_iou(iou_t: f64) -> Result<()> {
    if !(iou_t > 0.0 && iou_t < 1.0) {
        return Err(Error::InvalidInput(format!("iou threshold must be in (0, 1), got {iou_t}")));
    }
    Ok(())
}

pub fn match_detections(preds: &[ScoredQuad], gts: &[Annotation], iou_t: f64) -> Result<EvalRecord> {
    validate_iou(iou_t)?;
    let mut rec = EvalRecord::default();
    for (p, outcome) in match_ordered(preds, gts, iou_t) {
        match outcome {
            PredOutcome::Matched { gt, iou } => {
                rec.tp += 1;
                rec.matches.push(Match { pred: p, gt, iou });
            }
            PredOutcome::Ignored => rec.ignored_preds += 1,
            PredOutcome::FalsePositive => rec.fp += 1,
        }
    }
    rec.fn_ = gts.iter().filter(|g| !g.ignore).count() - rec.tp;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        }
    }

    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        Self::from_pr(ratio(tp as f64, (tp + fp) as f64), ratio(tp as f64, (tp + fn_) as f64))
    }
}

pub fn prf(record: &EvalRecord) -> Prf {
    Prf::from_counts(record.tp, record.fp, record.fn_)
}

/// One image: predictions and ground truth.
pub type EvalImage = (Vec<ScoredQuad>, Vec<Annotation>);

/// True-positive counts per IoU threshold, summed over images.
pub fn matched_count_at(images: &[EvalImage], thresholds: &[f64]) -> Result<Vec<(f64, usize)>> {
    thresholds
        .iter()
        .map(|&t| {
            let mut n = 0;
            for (preds, gts) in images {
                n += match_detections(preds, gts, t)?.tp;
            }
            Ok((t, n))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall as the score threshold sweeps down through every
/// distinct prediction score.
///
/// Greedy matching only looks at higher-ranked predictions, so keeping the
/// predictions with score >= t yields exactly the prefix of the full
/// matching; one pass gives all points. The curve starts at an infinite
/// threshold (nothing kept, P = R = 0).
pub fn pr_curve(images: &[EvalImage], iou_t: f64) -> Result<Vec<PrPoint>> {
    validate_iou(iou_t)?;
    let n_gt: usize = images.iter().map(|(_, g)| g.iter().filter(|a| !a.ignore).count()).sum();
    let mut events: Vec<(f64, PredOutcome)> = Vec::new();
    for (preds, gts) in images {
        for (p, o) in match_ordered(preds, gts, iou_t) {
            events.push((preds[p].score, o));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![PrPoint {
        threshold: f64::INFINITY,
        precision: 0.0,
        recall: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            match events[i].1 {
                PredOutcome::Matched { .. } => tp += 1,
                PredOutcome::FalsePositive => fp += 1,
                PredOutcome::Ignored => {}
            }
            i += 1;
        }
        curve.push(PrPoint {
            threshold: t,
            precision: ratio(tp as f64, (tp + fp) as f64),
            recall: ratio(tp as f64, n_gt as f64),
        });
    }
    Ok(curve)
}

pub fn format_pr_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in curve {
        let _ = writeln!(out, "{},{:.6},{:.6}", p.threshold, p.precision, p.recall);
    }
    out
}

pub fn format_matched_counts_csv(counts: &[(f64, usize)]) -> String {
    let mut out = String::from("iou_threshold,matched_count\n");
    for (t, n) in counts {
        let _ = writeln!(out, "{t},{n}");
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back a `threshold,precision,recall` file.
pub fn parse_pr_csv(text: &str) -> Result<Vec<PrPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("threshold,precision,recall") {
        return Err(Error::InvalidInput("missing PR csv header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("bad PR row {l:?}")))?;
            match f.as_slice() {
                [t, p, r] => Ok(PrPoint {
                    threshold: *t,
                    precision: *p,
                    recall: *r,
                }),
                _ => Err(Error::InvalidInput(format!("bad PR row {l:?}"))),
            }
        })
        .collect()
}
