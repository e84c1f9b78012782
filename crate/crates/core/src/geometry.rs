//! Quadrilateral geometry in image coordinates (x right, y down).
//!
//! Boxes are four-corner quadrilaterals. "Clockwise" is meant visually on
//! screen, which with y pointing down gives a positive shoelace sum.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn dist2(self, o: Point) -> f64 {
        let d = self.sub(o);
        d.x * d.x + d.y * d.y
    }
}

/// z-component of (b - a) x (c - a).
fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned extent `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn intersects(&self, o: &Bounds) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }

    pub fn union(&self, o: &Bounds) -> Bounds {
        Bounds {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }
}

/// A four-corner quadrilateral with finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadBox {
    corners: [Point; 4],
}

impl QuadBox {
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        if corners.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "quad corners must be finite, got {corners:?}"
            )));
        }
        Ok(Self { corners })
    }

    /// Builds a quad from `[x1, y1, x2, y2, x3, y3, x4, y4]`.
    pub fn from_coords(c: [f64; 8]) -> Result<Self> {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    /// Axis-aligned rectangle, corners clockwise from the top-left.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new([
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    /// Rectangle of size `w x h` centred at `(cx, cy)` rotated by `angle`
    /// radians (positive turns clockwise on screen).
    pub fn rotated_rect(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let local = [(-w / 2.0, -h / 2.0), (w / 2.0, -h / 2.0), (w / 2.0, h / 2.0), (-w / 2.0, h / 2.0)];
        let mut corners = [Point::default(); 4];
        for (dst, (u, v)) in corners.iter_mut().zip(local) {
            *dst = Point::new(cx + u * c - v * s, cy + u * s + v * c);
        }
        Self::new(corners)
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn to_coords(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, p) in self.corners.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    /// Shoelace sum; positive for visually clockwise corners.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.corners)
    }

    pub fn is_clockwise(&self) -> bool {
        self.signed_area() > 0.0
    }

    /// Same point set with corners in clockwise order.
    pub fn clockwise(&self) -> QuadBox {
        if self.signed_area() < 0.0 {
            let [a, b, c, d] = self.corners;
            QuadBox { corners: [a, d, c, b] }
        } else {
            *self
        }
    }

    pub fn is_convex(&self) -> bool {
        let mut sign = 0.0f64;
        for i in 0..4 {
            let z = cross(self.corners[i], self.corners[(i + 1) % 4], self.corners[(i + 2) % 4]);
            if z.abs() <= f64::EPSILON {
                continue;
            }
            if sign == 0.0 {
                sign = z.signum();
            } else if z.signum() != sign {
                return false;
            }
        }
        true
    }

    /// True when no two opposite edges cross.
    pub fn is_simple(&self) -> bool {
        let c = &self.corners;
        !segments_cross(c[0], c[1], c[2], c[3]) && !segments_cross(c[1], c[2], c[3], c[0])
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            x0: f64::INFINITY,
            y0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in &self.corners {
            b.x0 = b.x0.min(p.x);
            b.y0 = b.y0.min(p.y);
            b.x1 = b.x1.max(p.x);
            b.y1 = b.y1.max(p.y);
        }
        b
    }

    /// Point-in-quad test, boundary inclusive (even-odd rule for the interior).
    pub fn contains(&self, p: Point) -> bool {
        let c = &self.corners;
        let mut inside = false;
        for i in 0..4 {
            let a = c[i];
            let b = c[(i + 1) % 4];
            if on_segment(a, b, p) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<QuadBox> {
        QuadBox::new(self.corners.map(f))
    }

    pub fn scaled(&self, factor: f64) -> QuadBox {
        QuadBox {
            corners: self.corners.map(|p| Point::new(p.x * factor, p.y * factor)),
        }
    }

    /// Cyclic corner rotation of `self` closest (sum of squared corner
    /// distances) to `reference`. The point set is unchanged.
    pub fn aligned_to(&self, reference: &QuadBox) -> QuadBox {
        let mut best = *self;
        let mut best_cost = f64::INFINITY;
        for shift in 0..4 {
            let cand = QuadBox {
                corners: std::array::from_fn(|i| self.corners[(i + shift) % 4]),
            };
            let cost: f64 = cand
                .corners
                .iter()
                .zip(&reference.corners)
                .map(|(a, b)| a.dist2(*b))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = cand;
            }
        }
        best
    }

    /// Clockwise convex polygon covering the same area used by [`quad_iou`]:
    /// two triangles for a concave quad, the hull for a self-intersecting one.
    fn convex_parts(&self) -> Vec<Vec<Point>> {
        let q = self.clockwise();
        if q.is_convex() {
            return vec![q.corners.to_vec()];
        }
        if !q.is_simple() {
            return vec![convex_hull(&q.corners)];
        }
        // A simple concave quad has exactly one reflex corner; its diagonal
        // splits the quad into two triangles.
        let c = q.corners;
        let reflex = (0..4)
            .find(|&i| cross(c[(i + 3) % 4], c[i], c[(i + 1) % 4]) < 0.0)
            .unwrap_or(0);
        let (a, b, cc, d) = (c[reflex], c[(reflex + 1) % 4], c[(reflex + 2) % 4], c[(reflex + 3) % 4]);
        vec![vec![a, b, cc], vec![a, cc, d]]
    }
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let len2 = a.dist2(b);
    if len2 == 0.0 {
        return a.dist2(p) <= 1e-18;
    }
    let z = cross(a, b, p);
    if z * z > 1e-18 * len2 {
        return false;
    }
    let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len2;
    (0.0..=1.0).contains(&t)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Monotone-chain hull, returned with positive (clockwise on screen) orientation.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if signed_area(&hull) < 0.0 {
        hull.reverse();
    }
    hull
}

/// Clips `subject` against the convex, positively oriented `clip` polygon.
fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Absolute shoelace area.
pub fn quad_area(q: &QuadBox) -> f64 {
    q.signed_area().abs()
}

/// Area of the region covered by both quads.
pub fn intersection_area(a: &QuadBox, b: &QuadBox) -> f64 {
    if !a.bounds().intersects(&b.bounds()) {
        return 0.0;
    }
    let pa = a.convex_parts();
    let pb = b.convex_parts();
    let mut total = 0.0;
    for sa in &pa {
        for sb in &pb {
            if sb.len() < 3 || sa.len() < 3 {
                continue;
            }
            let clipped = clip_convex(sa, sb);
            if clipped.len() >= 3 {
                total += signed_area(&clipped).abs();
            }
        }
    }
    total
}

/// Area used for unions: the shoelace area for simple quads, the hull area
/// for self-intersecting ones (matching the intersection routine).
fn region_area(q: &QuadBox) -> f64 {
    if q.is_simple() {
        quad_area(q)
    } else {
        signed_area(&convex_hull(q.corners())).abs()
    }
}

/// Intersection over union; 0 when the union has no area.
pub fn quad_iou(a: &QuadBox, b: &QuadBox) -> f64 {
    if a == b {
        return if region_area(a) > 0.0 { 1.0 } else { 0.0 };
    }
    let inter = intersection_area(a, b);
    let union = region_area(a) + region_area(b) - inter;
    if union <= 1e-12 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression on quadrilaterals.
///
/// Returns kept indices in descending score order. Equal scores are ranked
/// by lower original index. A box is suppressed when its IoU with an
/// already-kept box exceeds `iou_threshold`.
pub fn rotated_nms(dets: &[(QuadBox, f64)], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "nms iou threshold must be in (0, 1), got {iou_threshold}"
        )));
    }
    if let Some((i, _)) = dets.iter().enumerate().find(|(_, d)| !d.1.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score at index {i}")));
    }
    let order = score_order(dets.iter().map(|d| d.1));
    let bounds: Vec<Bounds> = dets.iter().map(|d| d.0.bounds()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| bounds[k].intersects(&bounds[i]) && quad_iou(&dets[k].0, &dets[i].0) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Indices sorted by descending score, ties by ascending index.
pub fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Default aspect ratios (width / height) placed at every grid point.
pub const ANCHOR_RATIOS: [f64; 8] = [1.0, 2.0, 3.0, 5.0, 7.5, 1.0 / 2.0, 1.0 / 4.0, 1.0 / 6.0];

/// Ratio variants per grid point.
pub const ANCHORS_PER_POINT: usize = 8;

/// Axis-aligned default boxes for one pyramid level.
///
/// `boxes` is row-major in `(y, x, ratio)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub level_index: usize,
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub scale: f64,
    pub ratios: [f64; ANCHORS_PER_POINT],
    pub boxes: Vec<QuadBox>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn index(&self, y: usize, x: usize, ratio: usize) -> usize {
        (y * self.width + x) * ANCHORS_PER_POINT + ratio
    }

    pub fn center(&self, y: usize, x: usize) -> Point {
        Point::new((x as f64 + 0.5) * self.stride, (y as f64 + 0.5) * self.stride)
    }
}

/// Default boxes centred on `((x + 0.5) * stride, (y + 0.5) * stride)`; the
/// box for ratio `r` is `scale * sqrt(r)` wide and `scale / sqrt(r)` tall.
pub fn generate_anchors(
    level_index: usize,
    level_shape: (usize, usize),
    stride: f64,
    scale: f64,
    ratios: &[f64],
) -> Result<AnchorGrid> {
    let (h, w) = level_shape;
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!("anchor grid must be non-empty, got {h}x{w}")));
    }
    if !(stride > 0.0 && stride.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "anchor stride and scale must be positive, got stride={stride} scale={scale}"
        )));
    }
    let ratios: [f64; ANCHORS_PER_POINT] = ratios.try_into().map_err(|_| {
        Error::InvalidConfig(format!("expected {ANCHORS_PER_POINT} anchor ratios, got {}", ratios.len()))
    })?;
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidConfig(format!("anchor ratios must be positive, got {ratios:?}")));
    }
    let mut boxes = Vec::with_capacity(h * w * ANCHORS_PER_POINT);
    for y in 0..h {
        for x in 0..w {
            let cx = (x as f64 + 0.5) * stride;
            let cy = (y as f64 + 0.5) * stride;
            for r in ratios {
                let bw = scale * r.sqrt();
                let bh = scale / r.sqrt();
                boxes.push(QuadBox::rect(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)?);
            }
        }
    }
    Ok(AnchorGrid {
        level_index,
        height: h,
        width: w,
        stride,
        scale,
        ratios,
        boxes,
    })
}

fn anchor_extent(anchor: &QuadBox) -> Result<(f64, f64)> {
    let b = anchor.bounds();
    let (w, h) = (b.width(), b.height());
    if !(w > 1e-12 && h > 1e-12) {
        return Err(Error::InvalidInput(format!("degenerate anchor {w}x{h}")));
    }
    Ok((w, h))
}

/// Per-corner displacement from `anchor` to `gt`, normalised by the anchor's
/// width (x) and height (y). Corners are paired in order.
pub fn encode_offsets(anchor: &QuadBox, gt: &QuadBox) -> Result<[f64; 8]> {
    let (w, h) = anchor_extent(anchor)?;
    let mut out = [0.0; 8];
    for (i, (a, g)) in anchor.corners().iter().zip(gt.corners()).enumerate() {
        out[2 * i] = (g.x - a.x) / w;
        out[2 * i + 1] = (g.y - a.y) / h;
    }
    Ok(out)
}

/// Inverse of [`encode_offsets`].
pub fn decode_offsets(anchor: &QuadBox, offsets: &[f64; 8]) -> Result<QuadBox> {
    let (w, h) = anchor_extent(anchor)?;
    let c = anchor.corners();
    QuadBox::new(std::array::from_fn(|i| {
        Point::new(c[i].x + offsets[2 * i] * w, c[i].y + offsets[2 * i + 1] * h)
    }))
}

/// Row-major `{0, 1}` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!("mask dims must be >= 1, got {height}x{width}")));
        }
        Ok(Self {
            height,
            width,
            data: vec![0; height * width],
        })
    }

    pub fn filled(height: usize, width: usize) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        m.data.fill(1);
        Ok(m)
    }

    /// Builds a mask from arbitrary bytes; any nonzero value is foreground.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Nearest-neighbour resampling with half-pixel centres.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<BinaryMask> {
        let mut out = BinaryMask::zeros(height, width)?;
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                out.data[y * width + x] = self.data[sy * self.width + sx];
            }
        }
        Ok(out)
    }
}

/// Marks every pixel whose centre lies inside or on the boundary of any quad.
pub fn rasterize_mask(quads: &[QuadBox], height: usize, width: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::zeros(height, width)?;
    for q in quads {
        let b = q.bounds();
        let x_lo = (b.x0 - 0.5).ceil().max(0.0) as usize;
        let y_lo = (b.y0 - 0.5).ceil().max(0.0) as usize;
        let x_hi = ((b.x1 - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
        let y_hi = ((b.y1 - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
        if x_hi < 0.0 || y_hi < 0.0 {
            continue;
        }
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                if q.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    mask.data[y * width + x] = 1;
                }
            }
        }
    }
    Ok(mask)
}
