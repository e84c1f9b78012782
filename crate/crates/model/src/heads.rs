//! Classification and regression heads: four 3x3 convolutions followed by a
//! 3x5 convolution, one branch per task with separate parameters.

use tch::nn::{self, ConvConfigND, Init};
use tch::Tensor;

use crate::error::{Error, Result};
use crate::layers::conv;
use rfn_core::geometry::ANCHORS_PER_POINT;

const A: i64 = ANCHORS_PER_POINT as i64;

/// Prior foreground probability used to initialise the classification bias.
const PRIOR: f64 = 0.01;

#[derive(Debug)]
pub struct Branch {
    convs: Vec<nn::Conv2D>,
    out: nn::Conv<[i64; 2]>,
}

impl Branch {
    fn new(p: nn::Path, c: i64, depth: usize, out_ch: i64, bias: f64) -> Self {
        let convs = (0..depth).map(|i| conv(&p / format!("conv{i}"), c, c, 3, 1, true)).collect();
        let out = nn::conv(
            &p / "out",
            c,
            out_ch,
            [3, 5],
            ConvConfigND {
                stride: [1, 1],
                padding: [1, 2],
                dilation: [1, 1],
                groups: 1,
                bias: true,
                ws_init: Init::Randn { mean: 0.0, stdev: 0.01 },
                bs_init: Init::Const(bias),
                padding_mode: nn::PaddingMode::Zeros,
            },
        );
        Self { convs, out }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.shallow_clone();
        for c in &self.convs {
            y = y.apply(c).relu();
        }
        y.apply(&self.out)
    }
}

/// Raw head outputs for one level.
#[derive(Debug)]
pub struct LevelOutput {
    /// `N x (h*w*8)` logits ordered by `(y, x, ratio)`.
    pub logits: Tensor,
    /// `N x (h*w*8) x 8` corner offsets in the same order.
    pub offsets: Tensor,
}

#[derive(Debug)]
pub struct CrHeads {
    cls: Vec<Branch>,
    reg: Vec<Branch>,
}

impl CrHeads {
    /// `shared` uses one parameter set per branch for all four levels.
    pub fn new(p: nn::Path, c: i64, depth: usize, shared: bool) -> Self {
        let n = if shared { 1 } else { 4 };
        let prior_bias = -((1.0 - PRIOR) / PRIOR).ln();
        Self {
            cls: (0..n).map(|i| Branch::new(&p / format!("cls{i}"), c, depth, A, prior_bias)).collect(),
            reg: (0..n).map(|i| Branch::new(&p / format!("reg{i}"), c, depth, A * 8, 0.0)).collect(),
        }
    }

    fn branch(v: &[Branch], level: usize) -> &Branch {
        &v[level.min(v.len() - 1)]
    }

    pub fn forward_level(&self, x: &Tensor, level: usize) -> Result<LevelOutput> {
        let s = x.size();
        let [n, _, h, w] = s[..] else {
            return Err(Error::Shape(format!("expected N x C x h x w, got {s:?}")));
        };
        let logits = Self::branch(&self.cls, level).forward(x).permute([0, 2, 3, 1]).reshape([n, h * w * A]);
        // Channel r*8 + k holds component k of ratio r.
        let offsets = Self::branch(&self.reg, level)
            .forward(x)
            .view([n, A, 8, h, w])
            .permute([0, 3, 4, 1, 2])
            .reshape([n, h * w * A, 8]);
        Ok(LevelOutput { logits, offsets })
    }

    pub fn forward(&self, levels: &[Tensor]) -> Result<Vec<LevelOutput>> {
        levels.iter().enumerate().map(|(i, x)| self.forward_level(x, i)).collect()
    }
}
