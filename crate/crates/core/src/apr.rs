//! Attention-gated candidate selection for the refinement stage.
//!
//! The attention map is binarised, resampled to every pyramid level, and
//! only grid points on the predicted foreground contribute candidates. Each
//! such point keeps the best-scoring of its eight ratio boxes; the union over
//! levels is ranked by score and truncated to the pool capacity.

use crate::attention::AttentionMap;
use crate::detection::DetectionSet;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, QuadBox, ANCHORS_PER_POINT};

/// `1` where `A >= threshold`.
pub fn binarize_attention(attention: &AttentionMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!("binarize threshold must be in (0, 1), got {threshold}")));
    }
    let data = attention.values().iter().map(|&v| u8::from(v >= threshold)).collect();
    BinaryMask::from_vec(attention.height(), attention.width(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Foreground,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub level_index: usize,
    /// `(y, x)` on the level grid.
    pub grid_point: (usize, usize),
    pub ratio_index: usize,
    pub quad: QuadBox,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub capacity: usize,
    /// Sorted by descending score.
    pub entries: Vec<Candidate>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    /// Pool capacity.
    pub beta: usize,
    /// Top up the pool from background points when the foreground yields
    /// fewer than `beta` candidates.
    pub fallback: bool,
}

/// Best box per grid point; ties go to the lower ratio index.
fn point_winner(level: &DetectionSet, y: usize, x: usize) -> usize {
    let base = level.index(y, x, 0);
    let mut best = 0;
    for r in 1..ANCHORS_PER_POINT {
        if level.scores[base + r] > level.scores[base + best] {
            best = r;
        }
    }
    best
}

/// Descending score; ties in (level, y, x) order, foreground first.
fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then((a.provenance == Provenance::Fallback).cmp(&(b.provenance == Provenance::Fallback)))
        .then(a.level_index.cmp(&b.level_index))
        .then(a.grid_point.cmp(&b.grid_point))
}

pub fn select_candidates(levels: &[DetectionSet], foreground: &BinaryMask, cfg: &SelectConfig) -> Result<CandidatePool> {
    if cfg.beta == 0 {
        return Err(Error::InvalidInput("candidate pool capacity must be >= 1".into()));
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for level in levels {
        if level.len() != level.height * level.width * ANCHORS_PER_POINT {
            return Err(Error::Shape(format!(
                "level {} holds {} boxes for a {}x{} grid",
                level.level_index,
                level.len(),
                level.height,
                level.width
            )));
        }
        let mask = foreground.resize_nearest(level.height, level.width)?;
        for y in 0..level.height {
            for x in 0..level.width {
                let r = point_winner(level, y, x);
                let i = level.index(y, x, r);
                let on = mask.get(y, x);
                let cand = Candidate {
                    level_index: level.level_index,
                    grid_point: (y, x),
                    ratio_index: r,
                    quad: level.boxes[i],
                    score: level.scores[i],
                    provenance: if on { Provenance::Foreground } else { Provenance::Fallback },
                };
                if on {
                    fg.push(cand);
                } else if cfg.fallback {
                    bg.push(cand);
                }
            }
        }
    }
    fg.sort_by(rank);
    fg.truncate(cfg.beta);
    if fg.len() < cfg.beta {
        let need = cfg.beta - fg.len();
        bg.sort_by(rank);
        bg.truncate(need);
        fg.extend(bg);
        fg.sort_by(rank);
    }
    Ok(CandidatePool {
        capacity: cfg.beta,
        entries: fg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_anchors, ANCHOR_RATIOS};

    fn level(idx: usize, h: usize, w: usize, scores: Vec<f64>) -> DetectionSet {
        let g = generate_anchors(idx, (h, w), 4.0 * idx as f64, 16.0, &ANCHOR_RATIOS).unwrap();
        DetectionSet {
            level_index: idx,
            height: h,
            width: w,
            raw_offsets: vec![[0.0; 8]; g.len()],
            boxes: g.boxes,
            scores,
        }
    }

    #[test]
    fn binarize_examples() {
        let on = binarize_attention(&AttentionMap::constant(3, 3, 0.7).unwrap(), 0.5).unwrap();
        assert_eq!(on.count(), 9);
        let off = binarize_attention(&AttentionMap::constant(3, 3, 0.3).unwrap(), 0.5).unwrap();
        assert_eq!(off.count(), 0);
        let edge = binarize_attention(&AttentionMap::constant(3, 3, 0.5).unwrap(), 0.5).unwrap();
        assert_eq!(edge.count(), 9);
        assert!(binarize_attention(&AttentionMap::constant(1, 1, 0.5).unwrap(), 1.0).is_err());
    }

    #[test]
    fn one_point_contributes_its_best_ratio() {
        let scores: Vec<f64> = (1..=8).map(|v| v as f64 / 10.0).collect();
        let d = level(1, 1, 1, scores);
        let mask = BinaryMask::filled(1, 1).unwrap();
        let pool = select_candidates(&[d], &mask, &SelectConfig { beta: 1000, fallback: false }).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries[0].ratio_index, 7);
        assert!((pool.entries[0].score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_lower_ratio() {
        let d = level(1, 1, 1, vec![0.4; 8]);
        let pool = select_candidates(&[d], &BinaryMask::filled(1, 1).unwrap(), &SelectConfig { beta: 3, fallback: true }).unwrap();
        assert_eq!(pool.entries[0].ratio_index, 0);
    }

    #[test]
    fn full_foreground_keeps_everything() {
        let scores: Vec<f64> = (0..5 * 8 * 8).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let d = level(1, 5, 8, scores);
        let pool = select_candidates(&[d], &BinaryMask::filled(4, 4).unwrap(), &SelectConfig { beta: 1000, fallback: true }).unwrap();
        assert_eq!(pool.len(), 40);
        assert!(pool.entries.iter().all(|c| c.provenance == Provenance::Foreground));
        assert!(pool.entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn empty_foreground_falls_back() {
        let scores: Vec<f64> = (0..4 * 4 * 8).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let d = level(1, 4, 4, scores);
        let mask = BinaryMask::zeros(4, 4).unwrap();
        let pool = select_candidates(std::slice::from_ref(&d), &mask, &SelectConfig { beta: 5, fallback: true }).unwrap();
        assert_eq!(pool.len(), 5);
        assert!(pool.entries.iter().all(|c| c.provenance == Provenance::Fallback));
        let none = select_candidates(&[d], &mask, &SelectConfig { beta: 5, fallback: false }).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn zero_capacity_rejected() {
        let d = level(1, 1, 1, vec![0.1; 8]);
        assert!(select_candidates(&[d], &BinaryMask::filled(1, 1).unwrap(), &SelectConfig { beta: 0, fallback: true }).is_err());
    }
}
