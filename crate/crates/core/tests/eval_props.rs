mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfn_core::annotation::{Annotation, ScoredQuad};
use rfn_core::evalkit::*;
use rfn_core::geometry::{Point, QuadBox};
use support::random_convex_quad;

fn scene(rng: &mut impl Rng, n_gt: usize, n_pred: usize) -> (Vec<ScoredQuad>, Vec<Annotation>) {
    let gts: Vec<Annotation> = (0..n_gt)
        .map(|_| {
            let text = if rng.gen_bool(0.15) { "###" } else { "AB12" };
            Annotation::new(random_convex_quad(rng, 200.0), text).unwrap()
        })
        .collect();
    let preds = (0..n_pred)
        .map(|_| {
            let quad = if !gts.is_empty() && rng.gen_bool(0.7) {
                let g = gts.choose(rng).unwrap().quad;
                let (dx, dy) = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
                g.map(|p| Point::new(p.x + dx, p.y + dy)).unwrap()
            } else {
                random_convex_quad(rng, 200.0)
            };
            ScoredQuad { quad, score: (rng.gen_range(0..10) as f64) / 10.0 }
        })
        .collect();
    (preds, gts)
}

proptest! {
    #[test]
    fn counts_are_consistent(seed in any::<u64>(), n_gt in 0usize..8, n_pred in 0usize..12, iou_t in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = scene(&mut rng, n_gt, n_pred);
        let rec = match_detections(&preds, &gts, iou_t).unwrap();
        let non_ignore = gts.iter().filter(|g| !g.ignore).count();
        prop_assert_eq!(rec.tp + rec.fn_, non_ignore);
        prop_assert_eq!(rec.tp, rec.matches.len());
        prop_assert_eq!(rec.tp + rec.fp + rec.ignored_preds, preds.len());
        let mut gs: Vec<_> = rec.matches.iter().map(|m| m.gt).collect();
        let mut ps: Vec<_> = rec.matches.iter().map(|m| m.pred).collect();
        gs.sort();
        gs.dedup();
        ps.sort();
        ps.dedup();
        prop_assert_eq!(gs.len(), rec.tp);
        prop_assert_eq!(ps.len(), rec.tp);
        prop_assert!(rec.matches.iter().all(|m| m.iou >= iou_t && !gts[m.gt].ignore));
    }

    #[test]
    fn order_invariant_on_distinct_scores(seed in any::<u64>(), n_gt in 0usize..8, n_pred in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut preds, gts) = scene(&mut rng, n_gt, n_pred);
        for (i, p) in preds.iter_mut().enumerate() {
            p.score += i as f64 * 1e-6;
        }
        let a = match_detections(&preds, &gts, 0.5).unwrap();
        let mut shuffled = preds.clone();
        shuffled.shuffle(&mut rng);
        let b = match_detections(&shuffled, &gts, 0.5).unwrap();
        prop_assert_eq!((a.tp, a.fp, a.fn_, a.ignored_preds), (b.tp, b.fp, b.fn_, b.ignored_preds));
        let pa: Vec<_> = a.matches.iter().map(|m| (preds[m.pred].score.to_bits(), m.gt)).collect();
        let pb: Vec<_> = b.matches.iter().map(|m| (shuffled[m.pred].score.to_bits(), m.gt)).collect();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn matched_counts_non_increasing(seed in any::<u64>(), n_gt in 0usize..8, n_pred in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = vec![scene(&mut rng, n_gt, n_pred), scene(&mut rng, n_gt, n_pred)];
        let counts = matched_count_at(&images, &[0.3, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        prop_assert!(counts.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn pr_recall_monotone_and_matches_direct(seed in any::<u64>(), n_gt in 0usize..8, n_pred in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = vec![scene(&mut rng, n_gt, n_pred), scene(&mut rng, n_gt, n_pred)];
        let curve = pr_curve(&images, 0.5).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[1].recall >= w[0].recall && w[1].threshold < w[0].threshold));
        // Each point equals a from-scratch evaluation of the thresholded predictions.
        for pt in &curve[1..] {
            let mut rec = EvalRecord::default();
            for (preds, gts) in &images {
                let kept: Vec<_> = preds.iter().copied().filter(|p| p.score >= pt.threshold).collect();
                rec.merge(&match_detections(&kept, gts, 0.5).unwrap());
            }
            let direct = prf(&rec);
            prop_assert!((direct.precision - pt.precision).abs() < 1e-12);
            prop_assert!((direct.recall - pt.recall).abs() < 1e-12);
        }
    }

    #[test]
    fn f_measure_formula(p in 0.0..1.0f64, r in 0.0..1.0f64) {
        let f = f_measure(p, r);
        let reference = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((f - reference).abs() < 1e-15);
        prop_assert!(f <= (p + r) / 2.0 + 1e-15);
        prop_assert!(f >= p.min(r) - 1e-15 && f <= p.max(r) + 1e-15);
    }
}

#[test]
fn csv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let images = vec![scene(&mut rng, 5, 9)];
    let curve = pr_curve(&images, 0.5).unwrap();
    let back = parse_pr_csv(&format_pr_csv(&curve)).unwrap();
    assert_eq!(back.len(), curve.len());
    for (a, b) in back.iter().zip(&curve) {
        assert_eq!(a.threshold, b.threshold);
        assert!((a.precision - b.precision).abs() <= 5e-7 && (a.recall - b.recall).abs() <= 5e-7);
    }
}

#[test]
fn rectangle_fixture_gate() {
    let g = QuadBox::rect(0.0, 0.0, 100.0, 10.0).unwrap();
    let gts = vec![Annotation::new(g, "SN-001").unwrap()];
    let preds = vec![ScoredQuad { quad: QuadBox::rect(0.0, 0.0, 100.0, 7.0).unwrap(), score: 0.9 }];
    let counts = matched_count_at(&[(preds, gts)], &[0.6, 0.8]).unwrap();
    assert_eq!(counts, vec![(0.6, 1), (0.8, 0)]);
}
