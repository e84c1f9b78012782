//! Test-side reference implementations. Nothing here calls into the
//! geometry or selection code it is used to check, except where noted.
#![allow(dead_code)]

use rand::Rng;
use rfn_core::apr::{Candidate, Provenance};
use rfn_core::detection::DetectionSet;
use rfn_core::geometry::{Point, QuadBox};

/// A convex quad: four points on a rotated ellipse at increasing angles,
/// each angle confined to its own quarter so the shape never degenerates.
pub fn random_convex_quad(rng: &mut impl Rng, extent: f64) -> QuadBox {
    let cx = rng.gen_range(0.3 * extent..0.7 * extent);
    let cy = rng.gen_range(0.3 * extent..0.7 * extent);
    let a = rng.gen_range(0.05 * extent..0.3 * extent);
    let b = rng.gen_range(0.05 * extent..0.3 * extent);
    let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (rs, rc) = rot.sin_cos();
    let start: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let corners: [Point; 4] = std::array::from_fn(|i| {
        let t = start + std::f64::consts::FRAC_PI_2 * (i as f64 + rng.gen_range(0.1..0.9));
        let (u, v) = (a * t.cos(), b * t.sin());
        Point::new(cx + u * rc - v * rs, cy + u * rs + v * rc)
    });
    QuadBox::new(corners).unwrap().clockwise()
}

/// Inside test for a convex polygon via edge-side signs (boundary counts).
pub fn in_convex(q: &QuadBox, p: Point) -> bool {
    let c = q.corners();
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let (a, b) = (c[i], c[(i + 1) % 4]);
        let s = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        pos |= s > 0.0;
        neg |= s < 0.0;
    }
    !(pos && neg)
}

fn bbox(q: &QuadBox) -> (f64, f64, f64, f64) {
    let c = q.corners();
    let xs = c.iter().map(|p| p.x);
    let ys = c.iter().map(|p| p.y);
    (
        xs.clone().fold(f64::MAX, f64::min),
        ys.clone().fold(f64::MAX, f64::min),
        xs.fold(f64::MIN, f64::max),
        ys.fold(f64::MIN, f64::max),
    )
}

/// Monte-Carlo IoU of two convex quads from `samples` uniform draws over
/// their joint bounding box.
pub fn monte_carlo_iou(a: &QuadBox, b: &QuadBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let (ax0, ay0, ax1, ay1) = bbox(a);
    let (bx0, by0, bx1, by1) = bbox(b);
    let (x0, y0, x1, y1) = (ax0.min(bx0), ay0.min(by0), ax1.max(bx1), ay1.max(by1));
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Point::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        let (ia, ib) = (in_convex(a, p), in_convex(b, p));
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Suppression by repeated extraction of the highest remaining box. Uses
/// the library IoU as the pairwise overlap, so it checks the greedy
/// bookkeeping and ordering only.
pub fn brute_force_nms(dets: &[(QuadBox, f64)], thr: f64) -> Vec<usize> {
    let n = dets.len();
    let iou: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rfn_core::geometry::quad_iou(&dets[i].0, &dets[j].0)).collect())
        .collect();
    let mut alive = vec![true; n];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if alive[i] && best.is_none_or(|b| dets[i].1 > dets[b].1) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for j in 0..n {
            if alive[j] && iou[b][j] > thr {
                alive[j] = false;
            }
        }
    }
    kept
}

/// Reference selector: every (level, point, ratio) enumerated explicitly;
/// the level mask is looked up by mapping the point centre into the full
/// mask.
pub fn brute_force_select(
    levels: &[DetectionSet],
    mask: &[u8],
    mask_h: usize,
    mask_w: usize,
    beta: usize,
    fallback: bool,
) -> Vec<Candidate> {
    let mut winners: Vec<Candidate> = Vec::new();
    for d in levels {
        for y in 0..d.height {
            for x in 0..d.width {
                let mut best_r = 0;
                let mut best_s = f64::NEG_INFINITY;
                for r in 0..8 {
                    let s = d.scores[(y * d.width + x) * 8 + r];
                    if s > best_s {
                        best_s = s;
                        best_r = r;
                    }
                }
                let sy = ((y as f64 + 0.5) / d.height as f64 * mask_h as f64).floor() as usize;
                let sx = ((x as f64 + 0.5) / d.width as f64 * mask_w as f64).floor() as usize;
                let on = mask[sy.min(mask_h - 1) * mask_w + sx.min(mask_w - 1)] == 1;
                winners.push(Candidate {
                    level_index: d.level_index,
                    grid_point: (y, x),
                    ratio_index: best_r,
                    quad: d.boxes[(y * d.width + x) * 8 + best_r],
                    score: best_s,
                    provenance: if on { Provenance::Foreground } else { Provenance::Fallback },
                });
            }
        }
    }
    let key = |c: &Candidate| (c.level_index, c.grid_point);
    let order = |a: &Candidate, b: &Candidate| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.provenance as u8).cmp(&(b.provenance as u8)))
            .then(key(a).cmp(&key(b)))
    };
    let mut fg: Vec<Candidate> = winners.iter().copied().filter(|c| c.provenance == Provenance::Foreground).collect();
    fg.sort_by(order);
    fg.truncate(beta);
    if fallback && fg.len() < beta {
        let mut bg: Vec<Candidate> = winners.into_iter().filter(|c| c.provenance == Provenance::Fallback).collect();
        bg.sort_by(order);
        let need = beta - fg.len();
        fg.extend(bg.into_iter().take(need));
        fg.sort_by(order);
    }
    fg
}
