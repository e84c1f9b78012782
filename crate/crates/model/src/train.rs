//! The training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfn_core::annotation::Annotation;
use rfn_core::apr::SelectConfig;
use rfn_core::config::{DetNorm, Optimizer, RunConfig};
use rfn_core::geometry::{encode_offsets, quad_iou, QuadBox};
use rfn_core::matching::MatchConfig;
use tch::nn::{self, OptimizerConfig};
use tch::{Device, Kind, Tensor};

use crate::data::{flat_anchors, load_labelled, normalization_from, prepare_sample, LabelledImage, Sample};
use crate::error::{Error, Result};
use crate::infer::{attention_map, level_detections, propose};
use crate::losses::{
    batch_mean, detection_loss_parts, refine_loss, seg_loss, total_loss, DetNormalizer, FocalParams,
};
use crate::model::{ModelConfig, Rfn};
use crate::refine::{roi_box, roi_features};

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_seg: f64,
    pub l_det: f64,
    pub l_ref: f64,
    pub total: f64,
}

pub fn format_loss_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,L_seg,L_det,L_ref,total\n");
    for l in logs {
        let _ = writeln!(out, "{},{:.9},{:.9},{:.9},{:.9}", l.epoch, l.l_seg, l.l_det, l.l_ref, l.total);
    }
    out
}

pub fn match_config(cfg: &RunConfig) -> MatchConfig {
    MatchConfig {
        pos_iou: cfg.match_pos_iou,
        neg_iou: cfg.match_neg_iou,
        force_best_min_iou: (cfg.match_force_best_min_iou > 0.0).then_some(cfg.match_force_best_min_iou),
    }
}

/// Learning rate for an epoch (0-based): halved every `lr_halve_every`
/// epochs, with an optional linear warm-up over the first iterations.
pub fn learning_rate(cfg: &RunConfig, epoch: usize, iteration: usize) -> f64 {
    let base = cfg.train_lr * 0.5f64.powi((epoch / cfg.train_lr_halve_every) as i32);
    if iteration < cfg.train_warmup_iters {
        base * (iteration + 1) as f64 / cfg.train_warmup_iters as f64
    } else {
        base
    }
}

/// Region proposals with refinement targets for one image.
#[derive(Debug, Default)]
pub struct RoiBatch {
    pub boxes: Vec<QuadBox>,
    pub labels: Vec<bool>,
    pub targets: Vec<[f64; 8]>,
}

/// Labels candidates against the ground truth and samples at most
/// `count` of them with at most `positive_fraction` positives.
///
/// Candidates overlapping an ignore region at `pos_iou` or more without
/// being positive are left out.
pub fn sample_rois(
    candidates: &[QuadBox],
    annos: &[Annotation],
    pos_iou: f64,
    count: usize,
    positive_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RoiBatch> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for c in candidates {
        let cb = c.bounds();
        let mut best = (0.0, None);
        let mut ignored = false;
        for (g, a) in annos.iter().enumerate() {
            if !cb.intersects(&a.quad.bounds()) {
                continue;
            }
            let iou = quad_iou(c, &a.quad);
            if a.ignore {
                ignored |= iou >= pos_iou;
            } else if iou > best.0 {
                best = (iou, Some(g));
            }
        }
        match best {
            (iou, Some(g)) if iou >= pos_iou => {
                let gt = annos[g].quad.clockwise().aligned_to(c);
                pos.push((*c, encode_offsets(c, &gt)?));
            }
            _ if ignored => {}
            _ => neg.push(*c),
        }
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_pos = pos.len().min((count as f64 * positive_fraction).floor() as usize);
    let n_neg = neg.len().min(count - n_pos);
    let mut out = RoiBatch::default();
    for (b, t) in pos.into_iter().take(n_pos) {
        out.boxes.push(b);
        out.labels.push(true);
        out.targets.push(t);
    }
    for b in neg.into_iter().take(n_neg) {
        out.boxes.push(b);
        out.labels.push(false);
        out.targets.push([0.0; 8]);
    }
    Ok(out)
}

/// Loss values of one iteration.
#[derive(Debug)]
pub struct StepLosses {
    pub l_seg: Tensor,
    pub l_det: Tensor,
    pub l_ref: Tensor,
    pub total: Tensor,
}

fn scalar(t: &Tensor) -> f64 {
    t.to_kind(Kind::Double).double_value(&[])
}

/// Forward pass and all losses for a batch of prepared samples.
///
/// `step` is `(epoch, iteration)`, used in divergence reports.
pub fn batch_losses(model: &Rfn, cfg: &RunConfig, batch: &[&Sample], rng: &mut ChaCha8Rng, step: (usize, usize)) -> Result<StepLosses> {
    let device = model.device();
    let kind = model.kind();
    let images = Tensor::stack(&batch.iter().map(|s| &s.image).collect::<Vec<_>>(), 0);
    let x = model.preprocess(&images);
    let out = model.forward_t(&x, true)?;
    let n = batch.len() as i64;
    let a = model.num_anchors();

    let l_seg = if model.sff.is_some() {
        let masks = Tensor::stack(&batch.iter().map(|s| &s.mask).collect::<Vec<_>>(), 0).to_kind(kind).to_device(device);
        batch_mean(&seg_loss(&out.attention, &masks, cfg.loss_gamma, cfg.loss_delta_scale)?.total)
    } else {
        Tensor::zeros([], (kind, device))
    };

    let mut codes = Vec::with_capacity(batch.len() * a);
    let mut positives = Vec::new();
    for (b, s) in batch.iter().enumerate() {
        codes.extend_from_slice(&s.labels);
        positives.extend(s.positives.iter().map(|(i, t)| (b * a + i, *t)));
    }
    let probs = out.logits.sigmoid().view([n * a as i64]);
    let offsets = out.offsets.view([n * a as i64, 8]);
    let normalizer = match cfg.loss_det_normalizer {
        DetNorm::Active => DetNormalizer::Active,
        DetNorm::Positive => DetNormalizer::Positive,
    };
    let focal = FocalParams {
        alpha: cfg.loss_focal_alpha,
        gamma: cfg.loss_focal_gamma,
    };
    let l_det = detection_loss_parts(&probs, &offsets, &codes, &positives, focal, normalizer)?;
    let det_value = scalar(&l_det);
    let offsets_finite = bool::try_from(offsets.detach().isfinite().all())?;
    if !det_value.is_finite() || !offsets_finite {
        return Err(Error::NonFiniteLoss {
            epoch: step.0,
            iteration: step.1,
            detail: format!("L_det={det_value}, finite offsets: {offsets_finite}"),
        });
    }

    let l_ref = match &model.refine {
        Some(net) => {
            let probs_d = Vec::<f32>::try_from(probs.detach().to_kind(Kind::Float))?;
            let offs_d = Vec::<f32>::try_from(offsets.detach().to_kind(Kind::Float).flatten(0, -1))?;
            let select = SelectConfig {
                beta: cfg.apr_beta,
                fallback: cfg.apr_fallback,
            };
            let mut roi_boxes = Vec::with_capacity(batch.len());
            let mut labels = Vec::new();
            let mut targets = Vec::new();
            let mut batches = Vec::with_capacity(batch.len());
            for (b, s) in batch.iter().enumerate() {
                let levels = level_detections(model, &probs_d[b * a..(b + 1) * a], &offs_d[b * a * 8..(b + 1) * a * 8])?;
                let att = attention_map(&out.attention.get(b as i64).detach())?;
                let pool = propose(&levels, &att, cfg.apr_binarize_threshold, &select)?;
                let mut cands: Vec<QuadBox> = pool.entries.iter().map(|c| c.quad).collect();
                if cfg.apr_add_gt_proposals {
                    cands.extend(s.annotations.iter().filter(|a| !a.ignore).map(|a| a.quad));
                }
                cands.retain(|q| {
                    let bb = q.bounds();
                    bb.width() > 1e-3 && bb.height() > 1e-3
                });
                let rb = sample_rois(&cands, &s.annotations, cfg.apr_pos_iou, cfg.apr_rois_per_image, cfg.apr_positive_fraction, rng)?;
                roi_boxes.push(rb.boxes.iter().map(roi_box).collect::<Vec<_>>());
                labels.extend_from_slice(&rb.labels);
                targets.extend_from_slice(&rb.targets);
                batches.push(rb);
            }
            if labels.is_empty() {
                Tensor::zeros([], (kind, device))
            } else {
                let rois = roi_features(&out.features, &roi_boxes, (model.config.height, model.config.width), cfg.apr_roi_mode)?;
                let r = net.forward(&rois);
                refine_loss(&r.logits, &r.offsets, &labels, &targets)?
            }
        }
        None => Tensor::zeros([], (kind, device)),
    };

    let lambdas = [
        if model.sff.is_some() { cfg.loss_lambda1 } else { 0.0 },
        cfg.loss_lambda2,
        if model.refine.is_some() { cfg.loss_lambda3 } else { 0.0 },
    ];
    let total = total_loss(&l_seg, &l_det, &l_ref, lambdas);
    Ok(StepLosses {
        l_seg,
        l_det,
        l_ref,
        total,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Rfn,
    pub logs: Vec<EpochLog>,
}

/// Fixes torch's generator and thread count for reproducible runs.
pub fn configure_runtime(cfg: &RunConfig) {
    tch::manual_seed(cfg.train_seed as i64);
    if cfg.train_deterministic {
        tch::set_num_threads(1);
    } else if cfg.train_threads > 0 {
        tch::set_num_threads(cfg.train_threads as i32);
    }
}

/// Builds a model, prepares targets for `images` and trains it.
pub fn train_on(cfg: &RunConfig, images: &[LabelledImage], on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    configure_runtime(cfg);
    let mut model = Rfn::new(ModelConfig::from_run(cfg), Device::Cpu)?;
    model.norm = normalization_from(images);
    let anchors = flat_anchors(&model.anchors);
    let matching = match_config(cfg);
    let samples: Vec<Sample> = images.iter().map(|li| prepare_sample(li, &anchors, &matching)).collect::<Result<_>>()?;
    let n_pos: usize = samples.iter().map(|s| s.positives.len()).sum();
    log::info!("{} training images, {} positive default boxes", samples.len(), n_pos);

    let mut opt = match cfg.train_optimizer {
        Optimizer::Sgd => nn::Sgd {
            momentum: cfg.train_momentum,
            dampening: 0.0,
            wd: cfg.train_weight_decay,
            nesterov: false,
        }
        .build(&model.vs, cfg.train_lr)?,
        Optimizer::Adam => nn::Adam {
            wd: cfg.train_weight_decay,
            ..Default::default()
        }
        .build(&model.vs, cfg.train_lr)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.train_epochs);
    let mut iteration = 0usize;
    for epoch in 0..cfg.train_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.train_batch_size) {
            opt.set_lr(learning_rate(cfg, epoch, iteration));
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let losses = batch_losses(&model, cfg, &batch, &mut rng, (epoch, iteration))?;
            let vals = [scalar(&losses.l_seg), scalar(&losses.l_det), scalar(&losses.l_ref), scalar(&losses.total)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: format!("L_seg={} L_det={} L_ref={} total={}", vals[0], vals[1], vals[2], vals[3]),
                });
            }
            opt.zero_grad();
            losses.total.backward();
            if cfg.train_grad_clip > 0.0 {
                opt.clip_grad_norm(cfg.train_grad_clip);
            }
            opt.step();
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            steps += 1;
            iteration += 1;
        }
        let k = steps.max(1) as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            l_seg: sums[0] / k,
            l_det: sums[1] / k,
            l_ref: sums[2] / k,
            total: sums[3] / k,
        };
        log::info!(
            "epoch {} L_seg {:.4} L_det {:.4} L_ref {:.4} total {:.4}",
            log.epoch,
            log.l_seg,
            log.l_det,
            log.l_ref,
            log.total
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { model, logs })
}

/// Loads the dataset under `dir` and trains on it.
pub fn train(cfg: &RunConfig, dir: &Path, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let images = load_labelled(dir, cfg.image_height, cfg.image_width)?;
    train_on(cfg, &images, on_epoch)
}
