//! Foreground-focus module: an exponential low-level branch, parallel
//! multi-resolution fusion of the coarse levels, their fusion into a
//! single-channel attention map, and attention-driven feature reweighting.

use tch::nn;
use tch::Tensor;

use crate::error::{Error, Result};
use crate::layers::{conv, resize_bilinear, spatial, ConvBnRelu};

/// The fusion convolution starts near zero so that `A` begins close to 0.5
/// everywhere; a saturated start stalls the ratio-based segmentation loss.
const FUSE_INIT_STD: f64 = 1e-3;

/// `L = X1 * e^m`, `m` broadcast over channels.
pub fn exp_scale(x1: &Tensor, m: &Tensor) -> Tensor {
    x1 * m.exp()
}

/// `X * (1 + e^{A_i})` with `A` bilinearly resampled to the level size.
pub fn apply_attention(x: &Tensor, attention: &Tensor) -> Tensor {
    let (h, w) = spatial(x);
    x * (resize_bilinear(attention, h, w).exp() + 1.0)
}

#[derive(Debug)]
pub struct LowLevelBranch {
    convs: Vec<ConvBnRelu>,
}

impl LowLevelBranch {
    pub fn new(p: nn::Path, c: i64, depth: usize) -> Self {
        Self {
            convs: (0..depth).map(|i| ConvBnRelu::new(&p / format!("conv{i}"), c, c, 3, 1)).collect(),
        }
    }

    /// Returns `(L, m)`.
    pub fn forward_t(&self, x1: &Tensor, train: bool) -> (Tensor, Tensor) {
        let mut y = x1.shallow_clone();
        for c in &self.convs {
            y = y.apply_t(c, train);
        }
        let m = y.mean_dim(1, true, None);
        (exp_scale(x1, &m), m)
    }
}

/// One `F(X_i, s_k)` resampler.
#[derive(Debug)]
enum Resampler {
    Same(nn::Conv2D),
    /// 1x1 convolution, then bilinear upsampling.
    Up(nn::Conv2D),
    /// Chained stride-2 3x3 convolutions.
    Down(Vec<nn::Conv2D>),
}

impl Resampler {
    fn forward(&self, x: &Tensor, h: i64, w: i64) -> Tensor {
        match self {
            Resampler::Same(c) => x.apply(c),
            Resampler::Up(c) => resize_bilinear(&x.apply(c), h, w),
            Resampler::Down(cs) => cs.iter().fold(x.shallow_clone(), |acc, c| acc.apply(c)),
        }
    }
}

/// Squeeze-excitation channel gating.
#[derive(Debug)]
struct ChannelAttention {
    fc1: nn::Linear,
    fc2: nn::Linear,
}

impl ChannelAttention {
    fn new(p: nn::Path, ch: i64, reduction: i64) -> Self {
        let hidden = (ch / reduction).max(1);
        Self {
            fc1: nn::linear(&p / "fc1", ch, hidden, Default::default()),
            fc2: nn::linear(&p / "fc2", hidden, ch, Default::default()),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.size();
        let gate = x
            .mean_dim([2, 3].as_slice(), false, None)
            .apply(&self.fc1)
            .relu()
            .apply(&self.fc2)
            .sigmoid()
            .view([s[0], s[1], 1, 1]);
        x * gate
    }
}

#[derive(Debug)]
pub struct HighLevelFusion {
    /// `resamplers[k][i]` maps `X_{i+2}` to the size of `X_{k+2}`.
    resamplers: Vec<Vec<Resampler>>,
    channel_attention: ChannelAttention,
    reduce: nn::Conv2D,
}

/// Outputs of [`HighLevelFusion::forward`].
#[derive(Debug)]
pub struct HighLevelResponse {
    /// `Y2, Y3, Y4` at their native resolutions.
    pub ys: Vec<Tensor>,
    /// `H` at level-1 resolution.
    pub high: Tensor,
}

impl HighLevelFusion {
    pub fn new(p: nn::Path, c: i64) -> Self {
        let resamplers = (0..3)
            .map(|k| {
                (0..3)
                    .map(|i| {
                        let rp = &p / format!("f{}_{}", i + 2, k + 2);
                        match i.cmp(&k) {
                            std::cmp::Ordering::Equal => Resampler::Same(conv(rp, c, c, 3, 1, true)),
                            std::cmp::Ordering::Greater => Resampler::Up(conv(rp, c, c, 1, 1, true)),
                            std::cmp::Ordering::Less => {
                                Resampler::Down((0..k - i).map(|j| conv(&rp / format!("down{j}"), c, c, 3, 2, true)).collect())
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            resamplers,
            channel_attention: ChannelAttention::new(&p / "se", 3 * c, 4),
            reduce: conv(&p / "reduce", 3 * c, c, 1, 1, true),
        }
    }

    /// `xs` holds `X2, X3, X4`; `s1` is the level-1 size.
    pub fn forward(&self, xs: &[Tensor], s1: (i64, i64)) -> Result<HighLevelResponse> {
        if xs.len() != 3 {
            return Err(Error::Shape(format!("expected 3 coarse levels, got {}", xs.len())));
        }
        for (i, x) in xs.iter().enumerate() {
            let (h, w) = spatial(x);
            if h * (1 << (i + 1)) != s1.0 || w * (1 << (i + 1)) != s1.1 {
                return Err(Error::Shape(format!(
                    "level {} is {h}x{w}, inconsistent with a {}x{} first level",
                    i + 2,
                    s1.0,
                    s1.1
                )));
            }
        }
        let ys: Vec<Tensor> = (0..3)
            .map(|k| {
                let (h, w) = spatial(&xs[k]);
                let mut y = self.resamplers[k][0].forward(&xs[0], h, w);
                for (r, x) in self.resamplers[k].iter().zip(xs).skip(1) {
                    y = y + r.forward(x, h, w);
                }
                y
            })
            .collect();
        let up: Vec<Tensor> = ys.iter().map(|y| resize_bilinear(y, s1.0, s1.1)).collect();
        let high = self.channel_attention.forward(&Tensor::cat(&up, 1)).apply(&self.reduce);
        Ok(HighLevelResponse { ys, high })
    }
}

#[derive(Debug)]
pub struct Sff {
    pub low: LowLevelBranch,
    pub high: HighLevelFusion,
    pub fuse: nn::Conv2D,
}

#[derive(Debug)]
pub struct SffOutput {
    /// `N x 1 x h1 x w1`, values in (0, 1).
    pub attention: Tensor,
    /// `X̂_1..X̂_4`.
    pub reweighted: Vec<Tensor>,
    pub low: Tensor,
    pub high: HighLevelResponse,
}

impl Sff {
    pub fn new(p: nn::Path, c: i64, low_depth: usize) -> Self {
        Self {
            low: LowLevelBranch::new(&p / "low", c, low_depth),
            high: HighLevelFusion::new(&p / "high", c),
            fuse: nn::conv2d(
                &p / "fuse",
                2 * c,
                1,
                1,
                nn::ConvConfig {
                    ws_init: nn::Init::Randn { mean: 0.0, stdev: FUSE_INIT_STD },
                    bs_init: nn::Init::Const(0.0),
                    ..Default::default()
                },
            ),
        }
    }

    /// `A = sigmoid(conv1x1(L || H))`.
    pub fn fuse_attention(&self, low: &Tensor, high: &Tensor) -> Result<Tensor> {
        if low.size() != high.size() {
            return Err(Error::Shape(format!("L {:?} vs H {:?}", low.size(), high.size())));
        }
        Ok(Tensor::cat(&[low, high], 1).apply(&self.fuse).sigmoid())
    }

    pub fn forward_t(&self, pyramid: &[Tensor], train: bool) -> Result<SffOutput> {
        if pyramid.len() != 4 {
            return Err(Error::Shape(format!("expected 4 pyramid levels, got {}", pyramid.len())));
        }
        let (low, _) = self.low.forward_t(&pyramid[0], train);
        let high = self.high.forward(&pyramid[1..], spatial(&pyramid[0]))?;
        let attention = self.fuse_attention(&low, &high.high)?;
        let reweighted = pyramid.iter().map(|x| apply_attention(x, &attention)).collect();
        Ok(SffOutput {
            attention,
            reweighted,
            low,
            high,
        })
    }
}
