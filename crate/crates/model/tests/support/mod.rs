//! Scalar reference implementations of the training objectives, written
//! with plain loops over `f64` slices.
#![allow(dead_code)]

use tch::{Kind, Tensor};

pub const EPS: f64 = 1e-6;

pub fn dice(pred: &[f64], gt: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        inter += p * g;
        sp += p;
        sg += g;
    }
    1.0 - (2.0 * inter + EPS) / (sp + sg + EPS)
}

pub fn fn_fp(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    let sp: f64 = pred.iter().sum();
    let mut a = 0.0;
    let mut b = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let d = g - p;
        if d >= 0.5 {
            a += 1.0 - p;
        }
        if -d >= 0.5 {
            b += p;
        }
    }
    (a / (sp + EPS), b / (sp + EPS))
}

pub fn seg(pred: &[f64], gt: &[f64], gamma: f64, scale: f64) -> f64 {
    let ld = dice(pred, gt);
    let (a, b) = fn_fp(pred, gt);
    let sp: f64 = pred.iter().sum();
    let sg: f64 = gt.iter().sum();
    let delta = scale * sg / (sp + EPS);
    let lg = if b < delta { a } else { a + b - delta };
    ld + (-ld * gamma).exp() * lg
}

pub fn focal(p: f64, label: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if label > 0.5 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

pub fn smooth_l1(d: &[f64]) -> f64 {
    d.iter()
        .map(|x| {
            let a = x.abs();
            if a < 1.0 {
                0.5 * a * a
            } else {
                a - 0.5
            }
        })
        .sum()
}

pub fn t1(v: &[f64]) -> Tensor {
    Tensor::from_slice(v).view([1, v.len() as i64])
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_kind(Kind::Double).flatten(0, -1).double_value(&[0])
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    Vec::<f64>::try_from(t.to_kind(Kind::Double).flatten(0, -1)).unwrap()
}

/// Central differences of `f` at every coordinate in `idx`, compared to
/// `analytic`; returns the worst relative error.
pub fn worst_rel_error(x: &[f64], idx: &[usize], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut v = x.to_vec();
    for &i in idx {
        let x0 = v[i];
        v[i] = x0 + h;
        let up = f(&v);
        v[i] = x0 - h;
        let down = f(&v);
        v[i] = x0;
        let num = (up - down) / (2.0 * h);
        let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
