//! Per-level candidate boxes decoded from the classification/regression heads.

use crate::error::{Error, Result};
use crate::geometry::{decode_offsets, generate_anchors, AnchorGrid, QuadBox, ANCHORS_PER_POINT, ANCHOR_RATIOS};

/// Strides of the four pyramid levels.
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Anchor base side length relative to the level stride.
pub const ANCHOR_SCALE_PER_STRIDE: f64 = 4.0;

/// Default boxes for every level of an `height x width` input.
pub fn pyramid_anchors(height: usize, width: usize) -> Result<Vec<AnchorGrid>> {
    if !height.is_multiple_of(32) || !width.is_multiple_of(32) || height == 0 || width == 0 {
        return Err(Error::Shape(format!("input {height}x{width} must be a positive multiple of 32")));
    }
    LEVEL_STRIDES
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            generate_anchors(
                i + 1,
                (height / s, width / s),
                s as f64,
                ANCHOR_SCALE_PER_STRIDE * s as f64,
                &ANCHOR_RATIOS,
            )
        })
        .collect()
}

/// Decoded boxes and scores of one level, row-major in `(y, x, ratio)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub level_index: usize,
    pub height: usize,
    pub width: usize,
    pub boxes: Vec<QuadBox>,
    pub scores: Vec<f64>,
    pub raw_offsets: Vec<[f64; 8]>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn index(&self, y: usize, x: usize, ratio: usize) -> usize {
        (y * self.width + x) * ANCHORS_PER_POINT + ratio
    }
}

/// Decodes one level of head output.
///
/// `scores` holds `h * w * 8` values and `offsets` `h * w * 64` values, both
/// row-major in `(y, x, ratio[, component])`.
pub fn decode_detections(scores: &[f32], offsets: &[f32], anchors: &AnchorGrid) -> Result<DetectionSet> {
    let n = anchors.len();
    if scores.len() != n || offsets.len() != n * 8 {
        return Err(Error::Shape(format!(
            "level {} has {n} anchors but got {} scores and {} offsets",
            anchors.level_index,
            scores.len(),
            offsets.len()
        )));
    }
    let mut boxes = Vec::with_capacity(n);
    let mut raw_offsets = Vec::with_capacity(n);
    let mut out_scores = Vec::with_capacity(n);
    for (i, anchor) in anchors.boxes.iter().enumerate() {
        let off: [f64; 8] = std::array::from_fn(|k| offsets[i * 8 + k] as f64);
        boxes.push(decode_offsets(anchor, &off)?);
        raw_offsets.push(off);
        let s = scores[i] as f64;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("score {s} outside [0, 1] at anchor {i}")));
        }
        out_scores.push(s);
    }
    Ok(DetectionSet {
        level_index: anchors.level_index,
        height: anchors.height,
        width: anchors.width,
        boxes,
        scores: out_scores,
        raw_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(h: usize, w: usize) -> AnchorGrid {
        generate_anchors(2, (h, w), 8.0, 32.0, &ANCHOR_RATIOS).unwrap()
    }

    #[test]
    fn zero_offsets_give_anchor_boxes() {
        let g = level(8, 8);
        let d = decode_detections(&vec![0.5; 512], &vec![0.0; 4096], &g).unwrap();
        assert_eq!(d.len(), 512);
        assert_eq!(d.boxes, g.boxes);
    }

    #[test]
    fn single_offset_touches_one_box() {
        let g = level(3, 4);
        let mut off = vec![0.0f32; g.len() * 8];
        let target = g.index(1, 2, 5);
        off[target * 8 + 3] = 0.25;
        let d = decode_detections(&vec![0.1; g.len()], &off, &g).unwrap();
        let changed: Vec<usize> = (0..g.len()).filter(|&i| d.boxes[i] != g.boxes[i]).collect();
        assert_eq!(changed, vec![target]);
    }

    #[test]
    fn shape_mismatch() {
        let g = level(2, 2);
        assert!(decode_detections(&[0.5; 31], &[0.0; 256], &g).is_err());
        assert!(decode_detections(&[0.5; 32], &[0.0; 255], &g).is_err());
    }

    #[test]
    fn pyramid_layout() {
        let grids = pyramid_anchors(256, 256).unwrap();
        let dims: Vec<(usize, usize)> = grids.iter().map(|g| (g.height, g.width)).collect();
        assert_eq!(dims, vec![(64, 64), (32, 32), (16, 16), (8, 8)]);
        assert_eq!(grids[3].scale, 128.0);
        assert!(pyramid_anchors(250, 256).is_err());
    }
}
