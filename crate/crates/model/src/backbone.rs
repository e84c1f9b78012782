//! Residual backbone with a top-down feature pyramid.
//!
//! A two-convolution stride-4 stem feeds four residual stages at strides
//! 4, 8, 16 and 32. Lateral 1x1 convolutions bring every stage to `c`
//! channels; coarser levels are upsampled and added top-down, then each sum
//! is smoothed by a 3x3 convolution.

use tch::nn::{self, ModuleT};
use tch::Tensor;

use crate::error::{Error, Result};
use crate::layers::{conv, ConvBnRelu};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: i64,
    pub blocks_per_stage: usize,
    /// Pyramid channel count `c`.
    pub channels: i64,
}

#[derive(Debug)]
struct BasicBlock {
    a: ConvBnRelu,
    b: nn::Conv2D,
    b_bn: nn::BatchNorm,
    shortcut: Option<(nn::Conv2D, nn::BatchNorm)>,
}

impl BasicBlock {
    fn new(p: nn::Path, i: i64, o: i64, stride: i64) -> Self {
        let shortcut = (i != o || stride != 1).then(|| {
            (
                conv(&p / "proj", i, o, 1, stride, false),
                nn::batch_norm2d(&p / "proj_bn", o, Default::default()),
            )
        });
        Self {
            a: ConvBnRelu::new(&p / "a", i, o, 3, stride),
            b: conv(&p / "b", o, o, 3, 1, false),
            b_bn: nn::batch_norm2d(&p / "b_bn", o, Default::default()),
            shortcut,
        }
    }
}

impl ModuleT for BasicBlock {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        let y = xs.apply_t(&self.a, train).apply(&self.b).apply_t(&self.b_bn, train);
        let skip = match &self.shortcut {
            Some((c, bn)) => xs.apply(c).apply_t(bn, train),
            None => xs.shallow_clone(),
        };
        (y + skip).relu()
    }
}

#[derive(Debug)]
pub struct Backbone {
    stem: [ConvBnRelu; 2],
    stages: Vec<Vec<BasicBlock>>,
    lateral: Vec<nn::Conv2D>,
    smooth: Vec<nn::Conv2D>,
    pub config: BackboneConfig,
}

/// Four pyramid levels `X1..X4`, strides 4, 8, 16, 32, all with `c` channels.
pub type FeaturePyramid = Vec<Tensor>;

impl Backbone {
    pub fn new(p: nn::Path, config: BackboneConfig) -> Self {
        let s = config.stem_channels;
        let widths = [s, 2 * s, 4 * s, 8 * s];
        let stem = [ConvBnRelu::new(&p / "stem0", 3, s, 3, 2), ConvBnRelu::new(&p / "stem1", s, s, 3, 2)];
        let mut stages = Vec::new();
        let mut in_ch = s;
        for (si, &w) in widths.iter().enumerate() {
            let sp = &p / format!("stage{si}");
            let blocks = (0..config.blocks_per_stage)
                .map(|bi| {
                    let stride = if bi == 0 && si > 0 { 2 } else { 1 };
                    let b = BasicBlock::new(&sp / format!("block{bi}"), in_ch, w, stride);
                    in_ch = w;
                    b
                })
                .collect();
            stages.push(blocks);
        }
        let lateral = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| conv(&p / format!("lateral{i}"), w, config.channels, 1, 1, true))
            .collect();
        let smooth = (0..4)
            .map(|i| conv(&p / format!("smooth{i}"), config.channels, config.channels, 3, 1, true))
            .collect();
        Self {
            stem,
            stages,
            lateral,
            smooth,
            config,
        }
    }

    /// Runs the backbone on an `N x 3 x H x W` batch.
    pub fn extract_pyramid(&self, images: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let size = images.size();
        let [_, ch, h, w] = size[..] else {
            return Err(Error::Shape(format!("expected N x 3 x H x W input, got {size:?}")));
        };
        if ch != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {ch}")));
        }
        if h % 32 != 0 || w % 32 != 0 || h < 64 || w < 64 {
            return Err(Error::Shape(format!("input {h}x{w} must be >= 64 and divisible by 32")));
        }
        let mut x = images.apply_t(&self.stem[0], train).apply_t(&self.stem[1], train);
        let mut feats = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = x.apply_t(block, train);
            }
            feats.push(x.shallow_clone());
        }
        let mut merged: Vec<Tensor> = Vec::with_capacity(4);
        let mut top: Option<Tensor> = None;
        for i in (0..4).rev() {
            let mut lat = feats[i].apply(&self.lateral[i]);
            if let Some(t) = &top {
                let (lh, lw) = crate::layers::spatial(&lat);
                lat = lat + t.upsample_nearest2d([lh, lw], None, None);
            }
            top = Some(lat.shallow_clone());
            merged.push(lat);
        }
        merged.reverse();
        Ok(merged.iter().zip(&self.smooth).map(|(m, s)| m.apply(s)).collect())
    }
}
