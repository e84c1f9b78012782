//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is optional in a
//! file (unset keys keep their defaults) and unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthdata::{SynthConfig, TextureKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Divisor of the summed detection loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetNorm {
    /// Non-ignored default boxes.
    Active,
    /// Positive default boxes.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiMode {
    SumAllLevels,
    FpnAssign,
}

trait Value: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn format_value(&self) -> String;
}

impl Value for f64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "on" | "1" => Some(true),
            "false" | "off" | "0" => Some(false),
            _ => None,
        }
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for String {
    fn parse_value(s: &str) -> Option<Self> {
        Some(s.to_string())
    }
    fn format_value(&self) -> String {
        self.clone()
    }
}

impl Value for Optimizer {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Self::Sgd),
            "adam" => Some(Self::Adam),
            _ => None,
        }
    }
    fn format_value(&self) -> String {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
        .into()
    }
}

impl Value for RoiMode {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "sum_all_levels" => Some(Self::SumAllLevels),
            "fpn_assign" => Some(Self::FpnAssign),
            _ => None,
        }
    }
    fn format_value(&self) -> String {
        match self {
            Self::SumAllLevels => "sum_all_levels",
            Self::FpnAssign => "fpn_assign",
        }
        .into()
    }
}

impl Value for DetNorm {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "active" => Some(Self::Active),
            "positive" => Some(Self::Positive),
            _ => None,
        }
    }
    fn format_value(&self) -> String {
        match self {
            Self::Active => "active",
            Self::Positive => "positive",
        }
        .into()
    }
}

impl Value for TextureKind {
    fn parse_value(s: &str) -> Option<Self> {
        TextureKind::parse(s).ok()
    }
    fn format_value(&self) -> String {
        self.as_str().into()
    }
}

macro_rules! run_config {
    ($( $field:ident : $ty:ty = $default:expr, $key:literal; )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            /// Every recognised key, in serialisation order.
            pub const KEYS: &'static [&'static str] = &[$( $key, )*];

            /// Sets one key from its textual value, without range checks.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$field = <$ty as Value>::parse_value(value).ok_or_else(|| {
                            Error::InvalidConfig(format!("{key}: cannot parse {value:?}"))
                        })?;
                    } )*
                    _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( $key => Some(self.$field.format_value()), )*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    // data and synthesis
    data_train: String = "data/train".into(), "data.train";
    data_test: String = "data/test".into(), "data.test";
    synth_n: usize = 300, "synth.n";
    synth_seed: u64 = 7, "synth.seed";
    image_height: usize = 256, "image.height";
    image_width: usize = 256, "image.width";
    synth_instances_min: usize = 2, "synth.instances_min";
    synth_instances_max: usize = 5, "synth.instances_max";
    synth_rotation_min: f64 = -30.0, "synth.rotation_min_deg";
    synth_rotation_max: f64 = 30.0, "synth.rotation_max_deg";
    synth_char_height_min: f64 = 10.0, "synth.char_height_min";
    synth_char_height_max: f64 = 20.0, "synth.char_height_max";
    synth_length_min: usize = 4, "synth.length_min";
    synth_length_max: usize = 8, "synth.length_max";
    synth_contrast_gap: f64 = 0.3, "synth.contrast_gap";
    synth_texture: TextureKind = TextureKind::Mixed, "synth.texture";
    synth_distractors_min: usize = 1, "synth.distractors_min";
    synth_distractors_max: usize = 5, "synth.distractors_max";
    synth_ignore_prob: f64 = 0.05, "synth.ignore_prob";
    synth_noise_sigma: f64 = 0.03, "synth.noise_sigma";
    // model
    model_channels: usize = 16, "model.channels";
    model_stem_channels: usize = 16, "model.stem_channels";
    model_blocks_per_stage: usize = 2, "model.blocks_per_stage";
    model_low_level_convs: usize = 2, "model.low_level_convs";
    model_head_convs: usize = 4, "model.head_convs";
    model_share_heads: bool = true, "model.share_heads_across_levels";
    model_fc_dim: usize = 256, "model.fc_dim";
    // module toggles
    toggle_sff: bool = true, "toggle.sff";
    toggle_apr: bool = true, "toggle.apr";
    toggle_rescore: bool = true, "toggle.rescore";
    // optimisation
    train_epochs: usize = 40, "train.epochs";
    train_batch_size: usize = 8, "train.batch_size";
    train_optimizer: Optimizer = Optimizer::Adam, "train.optimizer";
    train_lr: f64 = 0.001, "train.lr";
    train_lr_halve_every: usize = 15, "train.lr_halve_every";
    train_momentum: f64 = 0.9, "train.momentum";
    train_weight_decay: f64 = 1e-4, "train.weight_decay";
    train_warmup_iters: usize = 0, "train.warmup_iters";
    train_grad_clip: f64 = 0.0, "train.grad_clip";
    train_seed: u64 = 7, "train.seed";
    train_deterministic: bool = false, "train.deterministic";
    train_threads: usize = 0, "train.threads";
    // losses
    loss_gamma: f64 = 0.1, "loss.gamma";
    loss_delta_scale: f64 = 0.01, "loss.delta_scale";
    loss_lambda1: f64 = 1.0, "loss.lambda1";
    loss_lambda2: f64 = 1.0, "loss.lambda2";
    loss_lambda3: f64 = 1.0, "loss.lambda3";
    loss_focal_alpha: f64 = 0.25, "loss.focal_alpha";
    loss_focal_gamma: f64 = 2.0, "loss.focal_gamma";
    loss_det_normalizer: DetNorm = DetNorm::Positive, "loss.det_normalizer";
    match_pos_iou: f64 = 0.5, "match.pos_iou";
    match_neg_iou: f64 = 0.4, "match.neg_iou";
    match_force_best_min_iou: f64 = 0.2, "match.force_best_min_iou";
    // refinement
    apr_beta: usize = 1000, "apr.beta";
    apr_binarize_threshold: f64 = 0.5, "apr.binarize_threshold";
    apr_fallback: bool = true, "apr.fallback";
    apr_roi_mode: RoiMode = RoiMode::SumAllLevels, "apr.roi_mode";
    apr_rois_per_image: usize = 256, "apr.rois_per_image";
    apr_positive_fraction: f64 = 0.25, "apr.positive_fraction";
    apr_pos_iou: f64 = 0.5, "apr.pos_iou";
    apr_add_gt_proposals: bool = true, "apr.add_gt_proposals";
    // post-processing
    post_mu: f64 = 0.5, "post.mu";
    post_score_floor: f64 = 0.05, "post.score_floor";
    post_nms_iou: f64 = 0.3, "post.nms_iou";
    post_pre_nms_top_k: usize = 1000, "post.pre_nms_top_k";
    post_max_detections: usize = 100, "post.max_detections";
    // evaluation
    eval_iou: f64 = 0.5, "eval.iou";
    // outputs
    run_dir: String = "runs/default".into(), "run.dir";
}

impl RunConfig {
    /// Full-scale values: 768x768 inputs, batch 12, lr halved every 50
    /// epochs, 256-channel pyramid, SGD with momentum.
    pub fn full_scale() -> Self {
        Self {
            train_optimizer: Optimizer::Sgd,
            image_height: 768,
            image_width: 768,
            train_batch_size: 12,
            train_lr_halve_every: 50,
            train_epochs: 150,
            model_channels: 256,
            model_stem_channels: 64,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "default" => Ok(Self::default()),
            "full-scale" => Ok(Self::full_scale()),
            _ => Err(Error::InvalidConfig(format!("unknown preset {name:?}"))),
        }
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got {raw:?}"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                *self = Self::preset(v)?;
                continue;
            }
            self.set(k, v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Parses a full configuration and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, Path::new("<config>"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key = value` lines for every key; `parse(serialize())` is the identity.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let v = self.get(key).unwrap_or_default();
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn within(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{key} = {v} outside [{lo}, {hi}]")))
            }
        }
        fn positive(key: &str, v: f64) -> Result<()> {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{key} = {v} must be > 0")))
            }
        }
        fn at_least(key: &str, v: usize, lo: usize) -> Result<()> {
            if v >= lo {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{key} = {v} must be >= {lo}")))
            }
        }
        for s in [self.data_train.as_str(), self.data_test.as_str(), self.run_dir.as_str()] {
            if s.contains('#') || s.trim() != s || s.is_empty() {
                return Err(Error::InvalidConfig(format!("path {s:?} must be non-empty, without surrounding whitespace or '#'")));
            }
        }
        at_least("synth.n", self.synth_n, 1)?;
        if self.image_height < 64 || self.image_width < 64 || !self.image_height.is_multiple_of(32) || !self.image_width.is_multiple_of(32) {
            return Err(Error::InvalidConfig("image dimensions must be multiples of 32 and >= 64".into()));
        }
        self.synth_config().validate()?;
        at_least("model.channels", self.model_channels, 4)?;
        at_least("model.stem_channels", self.model_stem_channels, 4)?;
        at_least("model.blocks_per_stage", self.model_blocks_per_stage, 1)?;
        at_least("model.low_level_convs", self.model_low_level_convs, 1)?;
        at_least("model.head_convs", self.model_head_convs, 1)?;
        at_least("model.fc_dim", self.model_fc_dim, 1)?;
        at_least("train.epochs", self.train_epochs, 1)?;
        at_least("train.batch_size", self.train_batch_size, 1)?;
        within("train.lr", self.train_lr, 1e-8, 10.0)?;
        at_least("train.lr_halve_every", self.train_lr_halve_every, 1)?;
        within("train.momentum", self.train_momentum, 0.0, 0.999)?;
        within("train.weight_decay", self.train_weight_decay, 0.0, 1.0)?;
        within("train.grad_clip", self.train_grad_clip, 0.0, 1e6)?;
        at_least("train.threads", self.train_threads, 0)?;
        positive("loss.gamma", self.loss_gamma)?;
        within("loss.delta_scale", self.loss_delta_scale, 0.0, 1.0)?;
        within("loss.lambda1", self.loss_lambda1, 0.0, 100.0)?;
        within("loss.lambda2", self.loss_lambda2, 0.0, 100.0)?;
        within("loss.lambda3", self.loss_lambda3, 0.0, 100.0)?;
        within("loss.focal_alpha", self.loss_focal_alpha, 0.0, 1.0)?;
        within("loss.focal_gamma", self.loss_focal_gamma, 0.0, 10.0)?;
        within("match.pos_iou", self.match_pos_iou, 0.01, 1.0)?;
        within("match.neg_iou", self.match_neg_iou, 0.01, self.match_pos_iou)?;
        within("match.force_best_min_iou", self.match_force_best_min_iou, 0.0, 1.0)?;
        at_least("apr.beta", self.apr_beta, 1)?;
        within("apr.binarize_threshold", self.apr_binarize_threshold, 1e-6, 1.0 - 1e-6)?;
        at_least("apr.rois_per_image", self.apr_rois_per_image, 1)?;
        within("apr.positive_fraction", self.apr_positive_fraction, 0.0, 1.0)?;
        within("apr.pos_iou", self.apr_pos_iou, 0.01, 1.0)?;
        within("post.mu", self.post_mu, 0.0, 100.0)?;
        within("post.score_floor", self.post_score_floor, 0.0, 1.0)?;
        within("post.nms_iou", self.post_nms_iou, 1e-6, 1.0 - 1e-6)?;
        at_least("post.pre_nms_top_k", self.post_pre_nms_top_k, 1)?;
        at_least("post.max_detections", self.post_max_detections, 1)?;
        within("eval.iou", self.eval_iou, 1e-6, 1.0 - 1e-6)?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            height: self.image_height,
            width: self.image_width,
            instances: (self.synth_instances_min, self.synth_instances_max),
            rotation_deg: (self.synth_rotation_min, self.synth_rotation_max),
            char_height: (self.synth_char_height_min, self.synth_char_height_max),
            length: (self.synth_length_min, self.synth_length_max),
            contrast_gap: self.synth_contrast_gap,
            texture: self.synth_texture,
            distractors: (self.synth_distractors_min, self.synth_distractors_max),
            ignore_prob: self.synth_ignore_prob,
            noise_sigma: self.synth_noise_sigma,
        }
    }

    /// Effective re-scoring weight after the toggle.
    pub fn effective_mu(&self) -> f64 {
        if self.toggle_rescore {
            self.post_mu
        } else {
            0.0
        }
    }

    /// Keys whose values change the network's parameter layout.
    pub const ARCHITECTURE_KEYS: &'static [&'static str] = &[
        "model.channels",
        "model.stem_channels",
        "model.blocks_per_stage",
        "model.low_level_convs",
        "model.head_convs",
        "model.share_heads_across_levels",
        "model.fc_dim",
        "toggle.sff",
        "toggle.apr",
        "image.height",
        "image.width",
    ];

    /// First architecture key whose value differs between the two configs.
    pub fn architecture_mismatch(&self, other: &RunConfig) -> Option<&'static str> {
        Self::ARCHITECTURE_KEYS.iter().copied().find(|k| self.get(k) != other.get(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::full_scale().validate().unwrap();
        assert_eq!(RunConfig::default().train_momentum, 0.9);
        assert_eq!(RunConfig::default().train_weight_decay, 1e-4);
        assert_eq!(RunConfig::full_scale().train_lr_halve_every, 50);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::full_scale();
        cfg.post_mu = 0.1 + 0.2;
        cfg.toggle_apr = false;
        cfg.run_dir = "runs/x y".into();
        let text = cfg.serialize();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse("# header\ntrain.epochs = 3 # short\n\ntoggle.sff = off\n").unwrap();
        assert_eq!(cfg.train_epochs, 3);
        assert!(!cfg.toggle_sff);
        let cfg = RunConfig::parse("preset = full-scale\ntrain.epochs = 2\n").unwrap();
        assert_eq!(cfg.image_height, 768);
        assert_eq!(cfg.train_epochs, 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("train.epochs = -1").is_err());
        assert!(RunConfig::parse("train.epochs = 0").is_err());
        assert!(RunConfig::parse("post.nms_iou = 1.5").is_err());
        assert!(RunConfig::parse("train.lr = nan").is_err());
        assert!(RunConfig::parse("image.height = 250").is_err());
        assert!(RunConfig::parse("just words").is_err());
        let err = RunConfig::parse("train.epochs = 3\nbogus = 1").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn mismatch_names_key() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train_epochs = 1;
        assert_eq!(a.architecture_mismatch(&b), None);
        b.model_channels = 32;
        assert_eq!(a.architecture_mismatch(&b), Some("model.channels"));
    }
}
