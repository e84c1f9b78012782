//! Small building blocks shared by the networks.

use tch::nn::{self, ConvConfig, Init, ModuleT};
use tch::Tensor;

/// Normal initialisation scaled by fan-in.
pub(crate) const FAN_IN_NORMAL: Init = Init::Kaiming {
    dist: nn::init::NormalOrUniform::Normal,
    fan: nn::init::FanInOut::FanIn,
    non_linearity: nn::init::NonLinearity::ReLU,
};

pub(crate) fn conv(p: nn::Path, i: i64, o: i64, k: i64, stride: i64, bias: bool) -> nn::Conv2D {
    nn::conv2d(
        p,
        i,
        o,
        k,
        ConvConfig {
            stride,
            padding: k / 2,
            bias,
            ws_init: FAN_IN_NORMAL,
            bs_init: Init::Const(0.0),
            ..Default::default()
        },
    )
}

/// Convolution, batch normalisation, ReLU.
#[derive(Debug)]
pub struct ConvBnRelu {
    conv: nn::Conv2D,
    bn: nn::BatchNorm,
}

impl ConvBnRelu {
    pub fn new(p: nn::Path, i: i64, o: i64, k: i64, stride: i64) -> Self {
        Self {
            conv: conv(&p / "conv", i, o, k, stride, false),
            bn: nn::batch_norm2d(&p / "bn", o, Default::default()),
        }
    }
}

impl ModuleT for ConvBnRelu {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        xs.apply(&self.conv).apply_t(&self.bn, train).relu()
    }
}

/// Bilinear resize with half-pixel centres.
pub fn resize_bilinear(xs: &Tensor, h: i64, w: i64) -> Tensor {
    let s = xs.size();
    if s[s.len() - 2] == h && s[s.len() - 1] == w {
        return xs.shallow_clone();
    }
    xs.upsample_bilinear2d([h, w], false, None, None)
}

pub fn spatial(xs: &Tensor) -> (i64, i64) {
    let s = xs.size();
    (s[s.len() - 2], s[s.len() - 1])
}
