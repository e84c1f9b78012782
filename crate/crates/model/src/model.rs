//! The full network: backbone, optional foreground-focus module, shared
//! classification/regression heads and optional refinement stage.

use rfn_core::config::RunConfig;
use rfn_core::detection::pyramid_anchors;
use rfn_core::geometry::AnchorGrid;
use tch::nn::VarStore;
use tch::{Device, Kind, Tensor};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::heads::CrHeads;
use crate::layers::spatial;
use crate::refine::RefineNet;
use crate::sff::{apply_attention, Sff};

/// Attention value used everywhere when the foreground-focus module is off.
pub const NEUTRAL_ATTENTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub height: i64,
    pub width: i64,
    pub backbone: BackboneConfig,
    pub low_level_convs: usize,
    pub head_convs: usize,
    pub share_heads: bool,
    pub fc_dim: i64,
    pub sff: bool,
    pub apr: bool,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            height: cfg.image_height as i64,
            width: cfg.image_width as i64,
            backbone: BackboneConfig {
                stem_channels: cfg.model_stem_channels as i64,
                blocks_per_stage: cfg.model_blocks_per_stage,
                channels: cfg.model_channels as i64,
            },
            low_level_convs: cfg.model_low_level_convs,
            head_convs: cfg.model_head_convs,
            share_heads: cfg.model_share_heads,
            fc_dim: cfg.model_fc_dim as i64,
            sff: cfg.toggle_sff,
            apr: cfg.toggle_apr,
        }
    }
}

/// Per-channel input normalisation constants (applied to values in [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// Head inputs `X̂_1..X̂_4` (plain pyramid levels when the module is off).
    pub features: Vec<Tensor>,
    /// `N x 1 x h1 x w1`.
    pub attention: Tensor,
    /// `N x A` logits over all default boxes, levels concatenated.
    pub logits: Tensor,
    /// `N x A x 8`.
    pub offsets: Tensor,
}

pub struct Rfn {
    pub vs: VarStore,
    pub config: ModelConfig,
    pub norm: Normalization,
    pub backbone: Backbone,
    pub sff: Option<Sff>,
    pub heads: CrHeads,
    pub refine: Option<RefineNet>,
    /// Default boxes per level, row-major `(y, x, ratio)`.
    pub anchors: Vec<AnchorGrid>,
}

impl std::fmt::Debug for Rfn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rfn").field("config", &self.config).field("norm", &self.norm).finish_non_exhaustive()
    }
}

impl Rfn {
    /// Fresh parameters drawn from the global torch generator.
    pub fn new(config: ModelConfig, device: Device) -> Result<Self> {
        let anchors = pyramid_anchors(config.height as usize, config.width as usize)?;
        let vs = VarStore::new(device);
        let root = vs.root();
        let c = config.backbone.channels;
        let backbone = Backbone::new(&root / "backbone", config.backbone);
        let sff = config.sff.then(|| Sff::new(&root / "sff", c, config.low_level_convs));
        let heads = CrHeads::new(&root / "heads", c, config.head_convs, config.share_heads);
        let refine = config.apr.then(|| RefineNet::new(&root / "refine", c, config.fc_dim));
        Ok(Self {
            vs,
            config,
            norm: Normalization::default(),
            backbone,
            sff,
            heads,
            refine,
            anchors,
        })
    }

    pub fn device(&self) -> Device {
        self.vs.device()
    }

    pub fn kind(&self) -> Kind {
        self.vs.kind()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.iter().map(|g| g.len()).sum()
    }

    /// `(start, len)` of each level inside the concatenated anchor axis.
    pub fn level_spans(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.anchors
            .iter()
            .map(|g| {
                let s = (start, g.len());
                start += g.len();
                s
            })
            .collect()
    }

    /// `N x H x W x 3` bytes to a normalised `N x 3 x H x W` tensor.
    pub fn preprocess(&self, images_hwc_u8: &Tensor) -> Tensor {
        let kind = self.kind();
        let x = images_hwc_u8.to_device(self.device()).permute([0, 3, 1, 2]).to_kind(kind) / 255.0;
        let mean = Tensor::from_slice(&self.norm.mean).to_kind(kind).to_device(self.device()).view([1, 3, 1, 1]);
        let std = Tensor::from_slice(&self.norm.std).to_kind(kind).to_device(self.device()).view([1, 3, 1, 1]);
        (x - mean) / std
    }

    pub fn forward_t(&self, images: &Tensor, train: bool) -> Result<ForwardOutput> {
        let (h, w) = spatial(images);
        if (h, w) != (self.config.height, self.config.width) {
            return Err(Error::Shape(format!(
                "model expects {}x{} inputs, got {h}x{w}",
                self.config.height, self.config.width
            )));
        }
        let pyramid = self.backbone.extract_pyramid(images, train)?;
        let (h1, w1) = spatial(&pyramid[0]);
        let n = images.size()[0];
        let (features, attention) = match &self.sff {
            Some(sff) => {
                let out = sff.forward_t(&pyramid, train)?;
                (out.reweighted, out.attention)
            }
            None => {
                let a = Tensor::full([n, 1, h1, w1], NEUTRAL_ATTENTION, (self.kind(), self.device()));
                (pyramid.iter().map(|x| apply_attention(x, &a)).collect(), a)
            }
        };
        let outs = self.heads.forward(&features)?;
        let logits = Tensor::cat(&outs.iter().map(|o| &o.logits).collect::<Vec<_>>(), 1);
        let offsets = Tensor::cat(&outs.iter().map(|o| &o.offsets).collect::<Vec<_>>(), 1);
        Ok(ForwardOutput {
            features,
            attention,
            logits,
            offsets,
        })
    }
}

