//! Raster output: detection overlays and precision/recall charts.

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use rfn_core::annotation::ScoredQuad;
use rfn_core::evalkit::PrPoint;

const INK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BOX: Rgb<u8> = Rgb([0, 230, 60]);

const PALETTE: [Rgb<u8>; 6] = [
    Rgb([214, 39, 40]),
    Rgb([31, 119, 180]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
    Rgb([148, 103, 189]),
    Rgb([23, 190, 207]),
];

/// 8x8 bitmap text with its top-left corner at `(x, y)`, scaled by `scale`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: u32, color: Rgb<u8>) {
    let s = scale.max(1) as i64;
    for (i, ch) in text.chars().enumerate() {
        let Some(glyph) = font8x8::BASIC_FONTS.get(ch) else { continue };
        let ox = x + i as i64 * 8 * s;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        let px = ox + col * s + dx;
                        let py = y + row as i64 * s + dy;
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

fn thick_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
        draw_line_segment_mut(img, (a.0 + dx, a.1 + dy), (b.0 + dx, b.1 + dy), color);
    }
}

/// Draws every detection outline with its score next to the first corner.
pub fn overlay(image: &RgbImage, dets: &[ScoredQuad]) -> RgbImage {
    let mut img = image.clone();
    for d in dets {
        let c = d.quad.corners();
        for i in 0..4 {
            let (p, q) = (c[i], c[(i + 1) % 4]);
            thick_line(&mut img, (p.x as f32, p.y as f32), (q.x as f32, q.y as f32), BOX);
        }
        draw_text(&mut img, c[0].x as i64, c[0].y as i64 - 9, &format!("{:.2}", d.score), 1, BOX);
    }
    img
}

/// Precision (vertical) against recall (horizontal) for each labelled curve.
pub fn pr_chart(curves: &[(String, Vec<PrPoint>)], title: &str, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (left, right, top, bottom) = (56.0f32, 16.0f32, 32.0f32, 44.0f32);
    let pw = width as f32 - left - right;
    let ph = height as f32 - top - bottom;
    let to_px = |r: f64, p: f64| (left + r as f32 * pw, top + (1.0 - p as f32) * ph);

    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let (x, _) = to_px(v, 0.0);
        let (_, y) = to_px(0.0, v);
        draw_line_segment_mut(&mut img, (x, top), (x, top + ph), GRID);
        draw_line_segment_mut(&mut img, (left, y), (left + pw, y), GRID);
        if i % 2 == 0 {
            let label = format!("{v:.1}");
            draw_text(&mut img, x as i64 - 12, (top + ph) as i64 + 6, &label, 1, INK);
            draw_text(&mut img, left as i64 - 30, y as i64 - 4, &label, 1, INK);
        }
    }
    if pw >= 1.0 && ph >= 1.0 {
        draw_hollow_rect_mut(&mut img, Rect::at(left as i32, top as i32).of_size(pw as u32, ph as u32), INK);
    }
    draw_text(&mut img, (left + pw / 2.0) as i64 - 24, height as i64 - 16, "Recall", 1, INK);
    draw_text(&mut img, 4, 12, "Precision", 1, INK);
    draw_text(&mut img, (width as i64 - 8 * title.len() as i64) / 2, 6, title, 1, INK);

    for (k, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let finite: Vec<&PrPoint> = pts.iter().filter(|p| p.threshold.is_finite()).collect();
        for w in finite.windows(2) {
            thick_line(&mut img, to_px(w[0].recall, w[0].precision), to_px(w[1].recall, w[1].precision), color);
        }
        let ly = top as i64 + 8 + 14 * k as i64;
        let lx = (left + pw) as i64 - 8 * label.len() as i64 - 28;
        thick_line(&mut img, (lx as f32, ly as f32 + 3.0), (lx as f32 + 16.0, ly as f32 + 3.0), color);
        draw_text(&mut img, lx + 22, ly, label, 1, INK);
    }
    img
}
