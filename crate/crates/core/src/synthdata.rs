//! Procedural "text on metal" images with word-level quadrilateral labels.
//!
//! Each image is a function of `(seed, SynthConfig)` only. Text is drawn
//! from an 8x8 bitmap font, scaled and rotated, onto a luminance texture
//! (value noise, brushed streaks or a lit gradient) with scratch-like
//! distractors, then tinted and quantised to 8-bit RGB.

use std::fs;
use std::path::{Path, PathBuf};

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::annotation::{read_annotations, write_annotations, Annotation, IGNORE_TEXT};
use crate::error::{Error, Result};
use crate::geometry::{intersection_area, Point, QuadBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    Noise,
    Brushed,
    Gradient,
    /// One of the three, drawn per image.
    Mixed,
}

impl TextureKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "brushed" => Ok(Self::Brushed),
            "gradient" => Ok(Self::Gradient),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::InvalidConfig(format!("unknown texture kind {s:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Brushed => "brushed",
            Self::Gradient => "gradient",
            Self::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of text instances per image.
    pub instances: (usize, usize),
    /// Inclusive rotation range in degrees (positive turns clockwise).
    pub rotation_deg: (f64, f64),
    /// Range of rendered ink height in pixels.
    pub char_height: (f64, f64),
    /// Inclusive range of characters per word.
    pub length: (usize, usize),
    /// Luminance separation between glyphs and the local background.
    pub contrast_gap: f64,
    pub texture: TextureKind,
    /// Inclusive range of scratch distractors per image.
    pub distractors: (usize, usize),
    /// Probability that an instance is drawn faintly and labelled `###`.
    pub ignore_prob: f64,
    /// Standard deviation of per-pixel sensor noise.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            instances: (2, 5),
            rotation_deg: (-30.0, 30.0),
            char_height: (10.0, 20.0),
            length: (4, 8),
            contrast_gap: 0.3,
            texture: TextureKind::Mixed,
            distractors: (1, 5),
            ignore_prob: 0.05,
            noise_sigma: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return bad(format!("image size {}x{} must be a positive multiple of 32", self.height, self.width));
        }
        if self.instances.0 > self.instances.1 {
            return bad(format!("empty instance range {:?}", self.instances));
        }
        if self.rotation_deg.0 > self.rotation_deg.1 {
            return bad(format!("empty rotation range {:?}", self.rotation_deg));
        }
        if !(self.char_height.0 > 0.0 && self.char_height.0 <= self.char_height.1) {
            return bad(format!("bad char height range {:?}", self.char_height));
        }
        if !(self.length.0 >= 1 && self.length.0 <= self.length.1) {
            return bad(format!("bad length range {:?}", self.length));
        }
        if !(0.0..=1.0).contains(&self.contrast_gap) {
            return bad(format!("contrast gap {} outside [0, 1]", self.contrast_gap));
        }
        if self.distractors.0 > self.distractors.1 {
            return bad(format!("empty distractor range {:?}", self.distractors));
        }
        if !(0.0..=1.0).contains(&self.ignore_prob) {
            return bad(format!("ignore probability {} outside [0, 1]", self.ignore_prob));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return bad(format!("negative noise sigma {}", self.noise_sigma));
        }
        Ok(())
    }
}

/// A generated image, its labels, and the per-pixel glyph coverage in [0, 1].
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
    pub ink: Vec<f32>,
}

const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const DIGITS: &[u8] = b"0123456789";

/// Serial-code style templates: `A` letter, `9` digit, `-` literal hyphen.
const TEMPLATES: &[&str] = &["AA-9999", "A99999", "99-AA-999", "AAA999", "9999-A", "AA99A", "A9A9-99", "999999"];

/// A word of `len` characters following a random template.
fn random_word(rng: &mut impl Rng, len: usize) -> String {
    let template = TEMPLATES.choose(rng).copied().unwrap_or("AA-9999").as_bytes();
    let mut out = String::with_capacity(len);
    for i in 0..len {
        let c = match template[i % template.len()] {
            b'A' => *LETTERS.choose(rng).unwrap_or(&b'A'),
            b'9' => *DIGITS.choose(rng).unwrap_or(&b'0'),
            _ if i == 0 || i + 1 == len => *LETTERS.choose(rng).unwrap_or(&b'A'),
            _ => b'-',
        };
        out.push(c as char);
    }
    out
}

fn glyph(c: char) -> [u8; 8] {
    BASIC_FONTS.get(c).unwrap_or([0; 8])
}

/// Ink bounding box of `word` in glyph units: `(u0, v0, u1, v1)`.
fn ink_extent(word: &str) -> (f64, f64, f64, f64) {
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (ci, c) in word.chars().enumerate() {
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    let u = (ci * 8 + col) as f64;
                    u0 = u0.min(u);
                    u1 = u1.max(u + 1.0);
                    v0 = v0.min(row as f64);
                    v1 = v1.max(row as f64 + 1.0);
                }
            }
        }
    }
    (u0, v0, u1, v1)
}

fn ink_at(word: &[char], u: f64, v: f64) -> bool {
    if u < 0.0 || !(0.0..8.0).contains(&v) {
        return false;
    }
    let (ui, vi) = (u as usize, v as usize);
    let ci = ui / 8;
    if ci >= word.len() {
        return false;
    }
    glyph(word[ci])[vi] >> (ui % 8) & 1 == 1
}

/// Bilinear value noise on a lattice with spacing `cell` pixels.
struct ValueNoise {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, cell: f64, height: usize, width: usize) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        Self {
            cell,
            cols,
            values: (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let at = |r: usize, c: usize| self.values[r * self.cols + c];
        let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
        let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn background(rng: &mut impl Rng, kind: TextureKind, h: usize, w: usize) -> Vec<f64> {
    let kind = match kind {
        TextureKind::Mixed => *[TextureKind::Noise, TextureKind::Brushed, TextureKind::Gradient]
            .choose(rng)
            .unwrap_or(&TextureKind::Noise),
        k => k,
    };
    let base = rng.gen_range(0.3..0.7);
    let coarse = ValueNoise::new(rng, 64.0, h, w);
    let mid = ValueNoise::new(rng, 16.0, h, w);
    let fine = ValueNoise::new(rng, 4.0, h, w);
    // Brushed metal: noise stretched along a random direction.
    let streak = ValueNoise::new(rng, 1.5, 2 * (h + w), 2 * (h + w));
    let brush_angle: f64 = rng.gen_range(-0.3..0.3);
    let (bs, bc) = brush_angle.sin_cos();
    let grad_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let grad_amp = rng.gen_range(0.1..0.3);
    let light = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64), rng.gen_range(0.0..0.2));
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base + 0.1 * coarse.sample(xf, yf);
            v += match kind {
                TextureKind::Noise => 0.08 * mid.sample(xf, yf) + 0.05 * fine.sample(xf, yf),
                TextureKind::Brushed => {
                    let along = xf * bc + yf * bs;
                    let across = -xf * bs + yf * bc + (h + w) as f64 / 2.0;
                    0.07 * streak.sample(along / 40.0 + (h + w) as f64 / 2.0, across) + 0.03 * mid.sample(xf, yf)
                }
                _ => {
                    let t = (xf * grad_angle.cos() + yf * grad_angle.sin()) / (h.max(w) as f64);
                    grad_amp * (t - 0.5) + 0.03 * fine.sample(xf, yf)
                }
            };
            let (dx, dy) = (xf - light.0, yf - light.1);
            v += light.2 * (-(dx * dx + dy * dy) / (2.0 * 80.0 * 80.0)).exp();
            out[y * w + x] = v;
        }
    }
    out
}

/// Scratches: thin anti-aliased segments with text-like contrast.
fn draw_distractors(rng: &mut impl Rng, lum: &mut [f64], h: usize, w: usize, count: usize, gap: f64) {
    for _ in 0..count {
        let a = Point::new(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let len = rng.gen_range(20.0..120.0);
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let b = Point::new(a.x + len * ang.cos(), a.y + len * ang.sin());
        let half_width = rng.gen_range(0.6..1.8);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let strength = sign * gap * rng.gen_range(0.5..1.0);
        let (x0, x1) = (a.x.min(b.x) - 3.0, a.x.max(b.x) + 3.0);
        let (y0, y1) = (a.y.min(b.y) - 3.0, a.y.max(b.y) + 3.0);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        for y in (y0.max(0.0) as usize)..(y1.min(h as f64) as usize) {
            for x in (x0.max(0.0) as usize)..(x1.min(w as f64) as usize) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0);
                let (cx, cy) = (a.x + t * dx, a.y + t * dy);
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let cover = (half_width + 0.5 - d).clamp(0.0, 1.0);
                lum[y * w + x] += strength * cover;
            }
        }
    }
}

struct Placement {
    quad: QuadBox,
    /// Quad grown by a margin, used for the non-overlap test.
    keep_out: QuadBox,
    word: Vec<char>,
    scale: f64,
    angle: f64,
    center: Point,
    /// Centre of the ink box in glyph units.
    ink_center: (f64, f64),
}

fn place(rng: &mut impl Rng, cfg: &SynthConfig) -> Result<Placement> {
    let len = rng.gen_range(cfg.length.0..=cfg.length.1);
    let word_s = random_word(rng, len);
    let (u0, v0, u1, v1) = ink_extent(&word_s);
    let char_h = rng.gen_range(cfg.char_height.0..=cfg.char_height.1);
    let scale = char_h / (v1 - v0);
    let (iw, ih) = ((u1 - u0) * scale, (v1 - v0) * scale);
    let angle = rng.gen_range(cfg.rotation_deg.0..=cfg.rotation_deg.1).to_radians();
    let center = Point::new(rng.gen_range(0.0..cfg.width as f64), rng.gen_range(0.0..cfg.height as f64));
    let quad = QuadBox::rotated_rect(center.x, center.y, iw, ih, angle)?;
    let margin = 3.0;
    let keep_out = QuadBox::rotated_rect(center.x, center.y, iw + 2.0 * margin, ih + 2.0 * margin, angle)?;
    Ok(Placement {
        quad,
        keep_out,
        word: word_s.chars().collect(),
        scale,
        angle,
        center,
        ink_center: ((u0 + u1) / 2.0, (v0 + v1) / 2.0),
    })
}

const MAX_ATTEMPTS: usize = 100;

/// Generates one sample. Instances that cannot be placed without overlap
/// within [`MAX_ATTEMPTS`] tries are dropped.
pub fn synth_sample(seed: u64, cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lum = background(&mut rng, cfg.texture, h, w);
    let n_distract = rng.gen_range(cfg.distractors.0..=cfg.distractors.1);
    draw_distractors(&mut rng, &mut lum, h, w, n_distract, cfg.contrast_gap);

    let n_target = rng.gen_range(cfg.instances.0..=cfg.instances.1);
    let mut placed: Vec<Placement> = Vec::new();
    'instances: for _ in 0..n_target {
        for _ in 0..MAX_ATTEMPTS {
            let p = place(&mut rng, cfg)?;
            let b = p.quad.bounds();
            let inside = b.x0 >= 1.0 && b.y0 >= 1.0 && b.x1 <= w as f64 - 1.0 && b.y1 <= h as f64 - 1.0;
            if inside && placed.iter().all(|o| intersection_area(&o.keep_out, &p.keep_out) == 0.0) {
                placed.push(p);
                continue 'instances;
            }
        }
        break;
    }

    let mut ink = vec![0.0f32; h * w];
    let mut annotations = Vec::with_capacity(placed.len());
    const SS: usize = 3;
    for p in &placed {
        let ignore = rng.gen_bool(cfg.ignore_prob);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let gap = if ignore { 0.3 * cfg.contrast_gap } else { cfg.contrast_gap };
        let (s, c) = p.angle.sin_cos();
        let b = p.quad.bounds();
        for y in (b.y0.floor().max(0.0) as usize)..(b.y1.ceil().min(h as f64) as usize) {
            for x in (b.x0.floor().max(0.0) as usize)..(b.x1.ceil().min(w as f64) as usize) {
                let mut hits = 0;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let px = x as f64 + (sx as f64 + 0.5) / SS as f64 - p.center.x;
                        let py = y as f64 + (sy as f64 + 0.5) / SS as f64 - p.center.y;
                        // Inverse rotation, then into glyph units.
                        let u = (px * c + py * s) / p.scale + p.ink_center.0;
                        let v = (-px * s + py * c) / p.scale + p.ink_center.1;
                        if ink_at(&p.word, u, v) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cover = hits as f64 / (SS * SS) as f64;
                    lum[y * w + x] += sign * gap * cover;
                    ink[y * w + x] = ink[y * w + x].max(cover as f32);
                }
            }
        }
        let text = if ignore { IGNORE_TEXT.to_string() } else { p.word.iter().collect() };
        annotations.push(Annotation::new(p.quad.clockwise(), text)?);
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(1e-12)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let tint = [1.0, rng.gen_range(0.94..1.0), rng.gen_range(0.86..0.98)];
    let mut image = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = lum[y * w + x] + if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let px = tint.map(|t| ((v * t).clamp(0.0, 1.0) * 255.0).round() as u8);
            image.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(SynthSample {
        image,
        annotations,
        ink,
    })
}

pub fn synth_image(seed: u64, cfg: &SynthConfig) -> Result<(RgbImage, Vec<Annotation>)> {
    let s = synth_sample(seed, cfg)?;
    Ok((s.image, s.annotations))
}

/// Independent per-image seed derived from a master seed (splitmix64 step).
pub fn image_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: String,
    pub instances: usize,
    pub seed: u64,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{},{},{}\n", e.image, e.instances, e.seed))
        .collect()
}

/// Writes `images/NNNNNN.png`, `labels/gt_NNNNNN.txt` and `manifest.txt`.
pub fn write_dataset(out: &Path, n: usize, master_seed: u64, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be >= 1".into()));
    }
    let images = out.join("images");
    let labels = out.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = Vec::with_capacity(n);
    for i in 0..n {
        let seed = image_seed(master_seed, i as u64);
        let (img, annos) = synth_image(seed, cfg)?;
        let stem = format!("{i:06}");
        let img_path = images.join(format!("{stem}.png"));
        img.save(&img_path).map_err(|source| Error::Image {
            path: img_path.clone(),
            source,
        })?;
        write_annotations(&annos, labels.join(format!("gt_{stem}.txt")))?;
        manifest.push(ManifestEntry {
            image: format!("{stem}.png"),
            instances: annos.len(),
            seed,
        });
    }
    let mpath = out.join("manifest.txt");
    fs::write(&mpath, format_manifest(&manifest)).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// One labelled image of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub stem: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
}

impl DatasetItem {
    pub fn annotations(&self) -> Result<Vec<Annotation>> {
        read_annotations(&self.label_path)
    }
}

/// Lists `images/*.png` with their `labels/gt_<stem>.txt`, sorted by stem.
pub fn list_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let images = dir.join("images");
    let rd = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut items = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(&images, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let label_path = dir.join("labels").join(format!("gt_{stem}.txt"));
        if !label_path.exists() {
            return Err(Error::InvalidInput(format!("missing label file {}", label_path.display())));
        }
        items.push(DatasetItem {
            stem,
            image_path: path,
            label_path,
        });
    }
    items.sort_by(|a, b| a.stem.cmp(&b.stem));
    if items.is_empty() {
        return Err(Error::InvalidInput(format!("no images under {}", images.display())));
    }
    Ok(items)
}
