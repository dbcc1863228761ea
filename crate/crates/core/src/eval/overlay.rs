use image::{imageops, Rgb, RgbImage};

use crate::dataset::Frame;

/// Arrow drawing parameters. Only the first two action components (the
/// transverse plane) are drawn; x points right and y points down in the
/// image, with no sign flips.
#[derive(Debug, Clone)]
pub struct OverlayStyle {
    /// Arrow length in output pixels per unit of action norm.
    pub pixels_per_unit: f32,
    /// Nearest-neighbor upscaling applied to the frame before drawing.
    pub upscale: u32,
    pub ground_truth: Rgb<u8>,
    pub prediction: Rgb<u8>,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            pixels_per_unit: 48.0,
            upscale: 4,
            ground_truth: Rgb([40, 200, 60]),
            prediction: Rgb([230, 40, 40]),
        }
    }
}

/// Draws ground truth, then prediction, as arrows from the image center.
pub fn render_action_overlay(frame: &Frame, pred: [f32; 3], gt: [f32; 3], style: &OverlayStyle) -> RgbImage {
    let base = frame.to_rgb();
    let scale = style.upscale.max(1);
    let mut img = imageops::resize(
        &base,
        base.width() * scale,
        base.height() * scale,
        imageops::FilterType::Nearest,
    );
    let center = (img.width() as f32 / 2.0, img.height() as f32 / 2.0);
    draw_arrow(
        &mut img,
        center,
        [gt[0], gt[1]],
        style.pixels_per_unit,
        style.ground_truth,
    );
    draw_arrow(
        &mut img,
        center,
        [pred[0], pred[1]],
        style.pixels_per_unit,
        style.prediction,
    );
    img
}

/// One overlay per frame, concatenated left to right.
pub fn render_overlay_strip(frames: &[Frame], preds: &[[f32; 3]], gts: &[[f32; 3]], style: &OverlayStyle) -> RgbImage {
    let tiles: Vec<RgbImage> = frames
        .iter()
        .zip(preds)
        .zip(gts)
        .map(|((f, &p), &g)| render_action_overlay(f, p, g, style))
        .collect();
    let width = tiles.iter().map(|t| t.width()).sum();
    let height = tiles.iter().map(|t| t.height()).max().unwrap_or(0);
    let mut strip = RgbImage::new(width, height);
    let mut x = 0;
    for t in &tiles {
        imageops::replace(&mut strip, t, x as i64, 0);
        x += t.width();
    }
    strip
}

fn put(img: &mut RgbImage, x: f32, y: f32, color: Rgb<u8>) {
    let (xi, yi) = (x.round() as i64, y.round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (px, py) = (xi + dx, yi + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, from: (f32, f32), to: (f32, f32), color: Rgb<u8>) {
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        put(img, from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1), color);
    }
}

fn draw_arrow(img: &mut RgbImage, center: (f32, f32), v: [f32; 2], scale: f32, color: Rgb<u8>) {
    let (dx, dy) = (v[0] * scale, v[1] * scale);
    let len = (dx * dx + dy * dy).sqrt();
    if len < 1.0 {
        // zero-length arrows render as a dot
        for oy in -1..=1 {
            for ox in -1..=1 {
                put(img, center.0 + ox as f32, center.1 + oy as f32, color);
            }
        }
        return;
    }
    let tip = (center.0 + dx, center.1 + dy);
    draw_line(img, center, tip, color);
    let head = (len * 0.3).clamp(3.0, 12.0);
    let (ux, uy) = (dx / len, dy / len);
    for side in [-1.0f32, 1.0] {
        let angle = side * 0.5;
        let (s, c) = angle.sin_cos();
        let bx = -(ux * c - uy * s);
        let by = -(ux * s + uy * c);
        draw_line(img, tip, (tip.0 + bx * head, tip.1 + by * head), color);
    }
}
