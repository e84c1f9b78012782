//! Second-stage refinement: 7x7 ROI features pooled from the pyramid, one
//! shared fully connected layer, then a score head and an 8-offset head.

use rfn_core::config::RoiMode;
use rfn_core::geometry::QuadBox;
use tch::nn::{self, Init, LinearConfig};
use tch::Tensor;

use crate::error::{Error, Result};

pub const ROI_SIZE: i64 = 7;

/// Anchor scale of the first level; level `l` (0-based) holds scale `16 * 2^l`.
const BASE_SCALE: f64 = 16.0;

/// `[x0, y0, x1, y1]` of the quad's axis-aligned bounding box.
pub fn roi_box(q: &QuadBox) -> [f64; 4] {
    let b = q.bounds();
    [b.x0, b.y0, b.x1, b.y1]
}

/// Pyramid level (0-based) whose anchor scale best matches the box size.
pub fn assign_level(b: &[f64; 4]) -> usize {
    let side = ((b[2] - b[0]).max(1e-6) * (b[3] - b[1]).max(1e-6)).sqrt();
    (side / BASE_SCALE).log2().round().clamp(0.0, 3.0) as usize
}

/// Bilinear 7x7 crops of every box from every level.
///
/// `boxes[b]` holds the boxes of batch image `b` in image pixels. Returns a
/// `K x c x 7 x 7` tensor, boxes in batch order. Sampling uses the image
/// extent for normalisation, so the same grid addresses every level;
/// samples past the outer pixel centres take the border value.
pub fn roi_features(levels: &[Tensor], boxes: &[Vec<[f64; 4]>], image_size: (i64, i64), mode: RoiMode) -> Result<Tensor> {
    let first = levels.first().ok_or_else(|| Error::Shape("no pyramid levels".into()))?;
    let n = first.size()[0];
    if boxes.len() as i64 != n {
        return Err(Error::Shape(format!("{} box lists for a batch of {n}", boxes.len())));
    }
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let kind = first.kind();
    let device = first.device();
    let c = first.size()[1];
    let mut per_image = Vec::with_capacity(boxes.len());
    for (b, bx) in boxes.iter().enumerate() {
        let k = bx.len() as i64;
        if k == 0 {
            continue;
        }
        let mut grid = Vec::with_capacity(bx.len() * 49 * 2);
        for r in bx {
            for i in 0..ROI_SIZE {
                let y = r[1] + (i as f64 + 0.5) / ROI_SIZE as f64 * (r[3] - r[1]);
                for j in 0..ROI_SIZE {
                    let x = r[0] + (j as f64 + 0.5) / ROI_SIZE as f64 * (r[2] - r[0]);
                    grid.push(2.0 * x / iw - 1.0);
                    grid.push(2.0 * y / ih - 1.0);
                }
            }
        }
        let grid = Tensor::from_slice(&grid).view([1, k * ROI_SIZE, ROI_SIZE, 2]).to_kind(kind).to_device(device);
        let mut acc: Option<Tensor> = None;
        let weights = match mode {
            RoiMode::SumAllLevels => None,
            RoiMode::FpnAssign => {
                let mut w = vec![0f32; bx.len() * levels.len()];
                for (i, r) in bx.iter().enumerate() {
                    w[i * levels.len() + assign_level(r).min(levels.len() - 1)] = 1.0;
                }
                Some(Tensor::from_slice(&w).view([k, levels.len() as i64]).to_kind(kind).to_device(device))
            }
        };
        for (l, level) in levels.iter().enumerate() {
            let feat = level.narrow(0, b as i64, 1);
            let mut s = feat
                .grid_sampler_2d(&grid, 0, 1, false)
                .view([c, k, ROI_SIZE, ROI_SIZE])
                .permute([1, 0, 2, 3]);
            if let Some(w) = &weights {
                s = s * w.select(1, l as i64).view([k, 1, 1, 1]);
            }
            acc = Some(match acc {
                Some(a) => a + s,
                None => s,
            });
        }
        per_image.extend(acc);
    }
    if per_image.is_empty() {
        return Ok(Tensor::zeros([0, c, ROI_SIZE, ROI_SIZE], (kind, device)));
    }
    Ok(Tensor::cat(&per_image, 0))
}

#[derive(Debug)]
pub struct RefineNet {
    fc: nn::Linear,
    cls: nn::Linear,
    reg: nn::Linear,
}

#[derive(Debug)]
pub struct RefineOutput {
    /// `K` logits.
    pub logits: Tensor,
    /// `K x 8` offsets relative to the candidate boxes.
    pub offsets: Tensor,
}

impl RefineNet {
    pub fn new(p: nn::Path, c: i64, fc_dim: i64) -> Self {
        let zero = LinearConfig {
            ws_init: Init::Const(0.0),
            bs_init: Some(Init::Const(0.0)),
            bias: true,
        };
        Self {
            fc: nn::linear(&p / "fc", c * ROI_SIZE * ROI_SIZE, fc_dim, Default::default()),
            cls: nn::linear(&p / "cls", fc_dim, 1, Default::default()),
            reg: nn::linear(&p / "reg", fc_dim, 8, zero),
        }
    }

    pub fn forward(&self, rois: &Tensor) -> RefineOutput {
        let k = rois.size()[0];
        let h = rois.view([k, -1]).apply(&self.fc).relu();
        RefineOutput {
            logits: h.apply(&self.cls).view([k]),
            offsets: h.apply(&self.reg),
        }
    }
}

