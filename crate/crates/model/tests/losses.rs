mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfn_core::matching::AnchorLabel;
use rfn_model::losses::{
    detection_loss, dice_loss, fn_fp_coeffs, focal_loss, refine_loss, seg_loss, smooth_l1, total_loss, DetNormalizer, FocalParams,
};
use support::*;
use tch::{Kind, Tensor};

const FOCAL: FocalParams = FocalParams { alpha: 0.25, gamma: 2.0 };

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let pred = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let gt = (0..n).map(|_| f64::from(rng.gen_bool(0.3))).collect();
    (pred, gt)
}

#[test]
fn seg_terms_match_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let (p, g) = random_pair(&mut rng, n);
        let (tp, tg) = (t1(&p), t1(&g));
        assert!((scalar(&dice_loss(&tp, &tg).unwrap()) - dice(&p, &g)).abs() < 1e-9);
        let (a, b) = fn_fp_coeffs(&tp, &tg).unwrap();
        let (ra, rb) = fn_fp(&p, &g);
        assert!((scalar(&a) - ra).abs() < 1e-9 * (1.0 + ra));
        assert!((scalar(&b) - rb).abs() < 1e-9 * (1.0 + rb));
        let s = seg_loss(&tp, &tg, 0.1, 0.01).unwrap();
        let r = seg(&p, &g, 0.1, 0.01);
        assert!((scalar(&s.total) - r).abs() < 1e-9 * (1.0 + r), "{} vs {r}", scalar(&s.total));
    }
}

#[test]
fn pointwise_terms_match_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let l: Vec<f64> = (0..1000).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let got = to_vec(&focal_loss(&Tensor::from_slice(&p), &Tensor::from_slice(&l), 0.25, 2.0));
    for i in 0..1000 {
        assert!((got[i] - focal(p[i], l[i], 0.25, 2.0)).abs() < 1e-9);
    }
    let d: Vec<f64> = (0..8000).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let got = to_vec(&smooth_l1(&Tensor::from_slice(&d).view([1000, 8]), &Tensor::zeros([1000, 8], (Kind::Double, tch::Device::Cpu))));
    for i in 0..1000 {
        assert!((got[i] - support::smooth_l1(&d[i * 8..i * 8 + 8])).abs() < 1e-9);
    }
}

#[test]
fn dice_examples() {
    let v = scalar(&dice_loss(&t1(&[1.0, 0.0, 0.0, 0.0]), &t1(&[1.0, 1.0, 0.0, 0.0])).unwrap());
    assert!((v - 1.0 / 3.0).abs() < 1e-6);
    let same = t1(&[1.0, 0.0, 1.0]);
    assert_eq!(scalar(&dice_loss(&same, &same).unwrap()), 0.0);
    let v = scalar(&dice_loss(&t1(&[0.0, 0.0]), &t1(&[1.0, 0.0])).unwrap());
    assert!((v - 1.0).abs() < 1e-6);
}

#[test]
fn coefficient_and_seg_examples() {
    let (p, g) = (t1(&[0.2, 0.9]), t1(&[1.0, 0.0]));
    let (a, b) = fn_fp_coeffs(&p, &g).unwrap();
    assert!((scalar(&a) - 0.727273).abs() < 1e-5);
    assert!((scalar(&b) - 0.818182).abs() < 1e-5);
    let s = seg_loss(&p, &g, 0.1, 0.01).unwrap();
    assert!((scalar(&s.total) - 2.2264).abs() < 1e-3);
    let ones = t1(&[1.0, 1.0]);
    let (a, b) = fn_fp_coeffs(&ones, &ones).unwrap();
    assert_eq!((scalar(&a), scalar(&b)), (0.0, 0.0));
    let exact = t1(&[1.0, 0.0, 1.0, 0.0]);
    assert_eq!(scalar(&seg_loss(&exact, &exact, 0.1, 0.01).unwrap().total), 0.0);
}

#[test]
fn seg_breakdown_recombines_exactly() {
    let (p, g) = (t1(&[0.2, 0.9, 0.4, 0.7]), t1(&[1.0, 0.0, 1.0, 1.0]));
    let s = seg_loss(&p, &g, 0.1, 0.01).unwrap();
    let rebuilt = &s.dice + (&s.dice * -s.gamma).exp() * &s.guard;
    assert_eq!(scalar(&rebuilt), scalar(&s.total));
}

#[test]
fn large_gamma_leaves_dice() {
    let (p, g) = (t1(&[0.2, 0.9]), t1(&[1.0, 0.0]));
    let s = seg_loss(&p, &g, 1e4, 0.01).unwrap();
    assert!((scalar(&s.total) - scalar(&s.dice)).abs() < 1e-12);
    assert!(seg_loss(&p, &g, 0.0, 0.01).is_err());
    assert!(seg_loss(&p, &t1(&[1.0]), 0.1, 0.01).is_err());
}

#[test]
fn focal_examples() {
    let v = |p: f64, l: f64, a: f64, g: f64| scalar(&focal_loss(&Tensor::from_slice(&[p]), &Tensor::from_slice(&[l]), a, g));
    assert!((v(0.5, 1.0, 0.25, 2.0) - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-9);
    assert!(v(1.0 - 1e-7, 1.0, 0.25, 2.0) < 1e-12);
}

#[test]
fn smooth_l1_examples() {
    let z = Tensor::zeros([1, 8], (Kind::Double, tch::Device::Cpu));
    let mut d = [0.0f64; 8];
    d[3] = 0.5;
    assert!((scalar(&smooth_l1(&Tensor::from_slice(&d).view([1, 8]), &z)) - 0.125).abs() < 1e-12);
    d[3] = 2.0;
    assert!((scalar(&smooth_l1(&Tensor::from_slice(&d).view([1, 8]), &z)) - 1.5).abs() < 1e-12);
    assert_eq!(scalar(&smooth_l1(&z, &z)), 0.0);
}

#[test]
fn detection_loss_examples() {
    let probs = Tensor::from_slice(&[1.0 - 1e-7, 0.5]);
    let offsets = Tensor::zeros([2, 8], (Kind::Double, tch::Device::Cpu));
    let labels = [AnchorLabel::Positive, AnchorLabel::Negative];
    let targets = vec![[0.0; 8], [0.0; 8]];
    let v = scalar(&detection_loss(&probs, &offsets, &labels, &targets, FOCAL, DetNormalizer::Active).unwrap());
    assert!((v - 0.75 * 0.25 * 2f64.ln() / 2.0).abs() < 1e-6);
    assert!((v - 0.064983).abs() < 1e-6);

    let single = scalar(
        &detection_loss(&probs.narrow(0, 0, 1), &offsets.narrow(0, 0, 1), &labels[..1], &targets[..1], FOCAL, DetNormalizer::Active).unwrap(),
    );
    assert!(single.abs() < 1e-6);

    let neg = [AnchorLabel::Negative, AnchorLabel::Negative];
    let shifted = Tensor::ones([2, 8], (Kind::Double, tch::Device::Cpu)) * 5.0;
    let a = scalar(&detection_loss(&probs, &offsets, &neg, &[[0.0; 8], [0.0; 8]], FOCAL, DetNormalizer::Active).unwrap());
    let b = scalar(&detection_loss(&probs, &shifted, &neg, &[[0.0; 8], [0.0; 8]], FOCAL, DetNormalizer::Active).unwrap());
    assert_eq!(a, b);

    let ignore = [AnchorLabel::Ignore, AnchorLabel::Ignore];
    assert!(detection_loss(&probs, &offsets, &ignore, &[[0.0; 8], [0.0; 8]], FOCAL, DetNormalizer::Active).is_err());
}

#[test]
fn positive_normalizer_divides_by_positive_count() {
    let probs = Tensor::from_slice(&[0.5, 0.5, 0.5]);
    let offsets = Tensor::zeros([3, 8], (Kind::Double, tch::Device::Cpu));
    let labels = [AnchorLabel::Positive, AnchorLabel::Negative, AnchorLabel::Negative];
    let targets = vec![[0.0; 8]; 3];
    let sum = focal(0.5, 1.0, 0.25, 2.0) + 2.0 * focal(0.5, 0.0, 0.25, 2.0);
    let pos = scalar(&detection_loss(&probs, &offsets, &labels, &targets, FOCAL, DetNormalizer::Positive).unwrap());
    let act = scalar(&detection_loss(&probs, &offsets, &labels, &targets, FOCAL, DetNormalizer::Active).unwrap());
    assert!((pos - sum).abs() < 1e-9);
    assert!((act - sum / 3.0).abs() < 1e-9);
}

#[test]
fn refine_loss_reference() {
    let logits = Tensor::from_slice(&[0.3, -1.2, 2.0]);
    let offsets = Tensor::from_slice(&[0.1f64; 24]).view([3, 8]);
    let targets = vec![[0.0; 8], [0.0; 8], [0.0; 8]];
    let v = scalar(&refine_loss(&logits, &offsets, &[true, false, true], &targets).unwrap());
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let bce = (-(sig(0.3)).ln() - (1.0 - sig(-1.2)).ln() - sig(2.0).ln()) / 3.0;
    let reg = 2.0 * support::smooth_l1(&[0.1; 8]) / 3.0;
    assert!((v - bce - reg).abs() < 1e-9);
}

#[test]
fn total_loss_examples() {
    let one = |v: f64| Tensor::from_slice(&[v]).view([]);
    assert_eq!(scalar(&total_loss(&one(1.0), &one(2.0), &one(3.0), [1.0, 1.0, 1.0])), 6.0);
    assert_eq!(scalar(&total_loss(&one(1.0), &one(2.0), &one(3.0), [0.0, 1.0, 0.0])), 2.0);
}

proptest! {
    #[test]
    fn dice_is_bounded(p in prop::collection::vec(0.0f64..=1.0, 1..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = p.iter().map(|_| f64::from(rng.gen_bool(0.4))).collect();
        let v = scalar(&dice_loss(&t1(&p), &t1(&g)).unwrap());
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn focal_reduces_to_half_cross_entropy(p in 1e-6f64..1.0 - 1e-6, label in any::<bool>()) {
        let l = f64::from(label);
        let v = scalar(&focal_loss(&Tensor::from_slice(&[p]), &Tensor::from_slice(&[l]), 0.5, 0.0));
        let ce = -(l * p.ln() + (1.0 - l) * (1.0 - p).ln());
        prop_assert!((v - 0.5 * ce).abs() < 1e-12);
    }
}
