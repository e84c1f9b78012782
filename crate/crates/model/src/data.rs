//! Loading labelled images and precomputing per-image training targets.

use std::path::Path;

use image::RgbImage;
use rfn_core::annotation::Annotation;
use rfn_core::geometry::{rasterize_mask, AnchorGrid, QuadBox};
use rfn_core::matching::{assign_anchors, AnchorLabel, MatchConfig};
use rfn_core::synthdata::list_dataset;
use tch::{Kind, Tensor};

use crate::error::{Error, Result};
use crate::model::Normalization;

/// Stride of the attention map.
pub const MASK_STRIDE: f64 = 4.0;

#[derive(Debug)]
pub struct LabelledImage {
    pub stem: String,
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| rfn_core::Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

/// Reads every image of a dataset directory, checking its size.
pub fn load_labelled(dir: &Path, height: usize, width: usize) -> Result<Vec<LabelledImage>> {
    let items = list_dataset(dir)?;
    items
        .into_iter()
        .map(|item| {
            let image = load_image(&item.image_path)?;
            if (image.height() as usize, image.width() as usize) != (height, width) {
                return Err(Error::Data(format!(
                    "{} is {}x{}, configuration expects {height}x{width}",
                    item.image_path.display(),
                    image.height(),
                    image.width()
                )));
            }
            Ok(LabelledImage {
                annotations: item.annotations()?,
                stem: item.stem,
                image,
            })
        })
        .collect()
}

/// `H x W x 3` byte tensor.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    Tensor::from_slice(img.as_raw()).view([img.height() as i64, img.width() as i64, 3])
}

/// Per-channel mean and standard deviation of pixel values in [0, 1].
pub fn normalization_from(images: &[LabelledImage]) -> Normalization {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut n = 0usize;
    for li in images {
        for p in li.image.pixels() {
            for c in 0..3 {
                let v = p.0[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Normalization::default();
    }
    let mean = sum.map(|s| s / n as f64);
    let std = std::array::from_fn(|c| (sq[c] / n as f64 - mean[c] * mean[c]).max(1e-8).sqrt());
    Normalization { mean, std }
}

/// Foreground mask at attention resolution (ignore regions are background).
pub fn attention_target(annos: &[Annotation], height: usize, width: usize) -> Result<Tensor> {
    let (h1, w1) = ((height as f64 / MASK_STRIDE) as usize, (width as f64 / MASK_STRIDE) as usize);
    let quads: Vec<QuadBox> = annos.iter().filter(|a| !a.ignore).map(|a| a.quad.scaled(1.0 / MASK_STRIDE)).collect();
    let mask = rasterize_mask(&quads, h1, w1)?;
    Ok(Tensor::from_slice(mask.as_slice()).view([1, h1 as i64, w1 as i64]).to_kind(Kind::Float))
}

/// Training targets for one image.
#[derive(Debug)]
pub struct Sample {
    pub stem: String,
    /// `H x W x 3` bytes.
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
    /// Per default box: 0 negative, 1 positive, 2 ignored.
    pub labels: Vec<u8>,
    pub positives: Vec<(usize, [f64; 8])>,
    pub num_active: usize,
    /// `1 x h1 x w1` foreground mask.
    pub mask: Tensor,
}

impl Sample {
    pub fn anchor_labels(&self) -> Vec<AnchorLabel> {
        self.labels
            .iter()
            .map(|l| match l {
                1 => AnchorLabel::Positive,
                2 => AnchorLabel::Ignore,
                _ => AnchorLabel::Negative,
            })
            .collect()
    }
}

pub fn flat_anchors(grids: &[AnchorGrid]) -> Vec<QuadBox> {
    grids.iter().flat_map(|g| g.boxes.iter().copied()).collect()
}

pub fn prepare_sample(li: &LabelledImage, anchors: &[QuadBox], matching: &MatchConfig) -> Result<Sample> {
    let m = assign_anchors(anchors, &li.annotations, matching)?;
    let labels = m
        .labels
        .iter()
        .map(|l| match l {
            AnchorLabel::Negative => 0,
            AnchorLabel::Positive => 1,
            AnchorLabel::Ignore => 2,
        })
        .collect();
    let positives = m
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == AnchorLabel::Positive)
        .map(|(i, _)| (i, m.targets[i]))
        .collect();
    Ok(Sample {
        stem: li.stem.clone(),
        image: image_tensor(&li.image),
        annotations: li.annotations.clone(),
        labels,
        positives,
        num_active: m.num_active(),
        mask: attention_target(&li.annotations, li.image.height() as usize, li.image.width() as usize)?,
    })
}
