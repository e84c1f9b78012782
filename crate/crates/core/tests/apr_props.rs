mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfn_core::apr::*;
use rfn_core::attention::AttentionMap;
use rfn_core::detection::DetectionSet;
use rfn_core::geometry::{generate_anchors, BinaryMask, ANCHOR_RATIOS};

fn random_levels(rng: &mut impl Rng, base: usize) -> Vec<DetectionSet> {
    (0..4)
        .map(|l| {
            let side = (base >> l).max(1);
            let g = generate_anchors(l + 1, (side, side), (4 << l) as f64, (16 << l) as f64, &ANCHOR_RATIOS).unwrap();
            // Coarse quantisation makes score ties common.
            let scores = (0..g.len()).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
            DetectionSet {
                level_index: l + 1,
                height: side,
                width: side,
                raw_offsets: vec![[0.0; 8]; g.len()],
                boxes: g.boxes,
                scores,
            }
        })
        .collect()
}

fn random_attention(rng: &mut impl Rng, side: usize, p_on: f64) -> AttentionMap {
    let v = (0..side * side).map(|_| if rng.gen_bool(p_on) { rng.gen_range(0.5..1.0) } else { rng.gen_range(0.0..0.5) }).collect();
    AttentionMap::new(side, side, v).unwrap()
}

proptest! {
    #[test]
    fn matches_reference_selector(seed in any::<u64>(), beta in 1usize..200, p_on in 0.0..1.0f64, fallback in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = random_levels(&mut rng, 8);
        let att = random_attention(&mut rng, 8, p_on);
        let mask = binarize_attention(&att, 0.5).unwrap();
        let pool = select_candidates(&levels, &mask, &SelectConfig { beta, fallback }).unwrap();
        let reference = support::brute_force_select(&levels, mask.as_slice(), 8, 8, beta, fallback);
        prop_assert_eq!(&pool.entries, &reference);
        prop_assert!(pool.len() <= beta);
        let total_points: usize = levels.iter().map(|d| d.height * d.width).sum();
        if fallback {
            prop_assert_eq!(pool.len(), beta.min(total_points));
        }
    }

    #[test]
    fn foreground_purity_without_fallback(seed in any::<u64>(), beta in 1usize..100, p_on in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = random_levels(&mut rng, 8);
        let mask = binarize_attention(&random_attention(&mut rng, 8, p_on), 0.5).unwrap();
        let pool = select_candidates(&levels, &mask, &SelectConfig { beta, fallback: false }).unwrap();
        for c in &pool.entries {
            prop_assert_eq!(c.provenance, Provenance::Foreground);
            let d = &levels[c.level_index - 1];
            let fi = mask.resize_nearest(d.height, d.width).unwrap();
            prop_assert!(fi.get(c.grid_point.0, c.grid_point.1));
        }
        prop_assert!(pool.entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn growing_foreground_keeps_selection(seed in any::<u64>(), p_on in 0.0..0.6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = random_levels(&mut rng, 8);
        let small = binarize_attention(&random_attention(&mut rng, 8, p_on), 0.5).unwrap();
        let mut big = small.clone();
        for y in 0..8 {
            for x in 0..8 {
                if rng.gen_bool(0.3) {
                    big.set(y, x, true);
                }
            }
        }
        let cfg = SelectConfig { beta: 100_000, fallback: false };
        let a = select_candidates(&levels, &small, &cfg).unwrap();
        let b = select_candidates(&levels, &big, &cfg).unwrap();
        for c in &a.entries {
            prop_assert!(b.entries.contains(c));
        }
    }
}

#[test]
fn all_background_falls_back_to_global_top() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let levels = random_levels(&mut rng, 8);
    let mask = BinaryMask::zeros(8, 8).unwrap();
    let pool = select_candidates(&levels, &mask, &SelectConfig { beta: 10, fallback: true }).unwrap();
    assert_eq!(pool.len(), 10);
    assert!(pool.entries.iter().all(|c| c.provenance == Provenance::Fallback));
    assert_eq!(pool.entries, support::brute_force_select(&levels, mask.as_slice(), 8, 8, 10, true));
}
