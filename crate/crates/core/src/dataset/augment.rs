use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};
use crate::rng;

/// Photometric and geometric augmentation settings.
///
/// Jitter strengths are fractions: a brightness strength of 0.4 scales pixel
/// values by a factor drawn from `[0.6, 1.4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Area fraction range of the random square crop.
    pub crop_scale: (f32, f32),
    pub rotation_deg: f32,
    pub output_size: usize,
    pub jitter: bool,
    pub crop: bool,
    pub rotation: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            crop_scale: (0.6, 1.0),
            rotation_deg: 15.0,
            output_size: 224,
            jitter: true,
            crop: true,
            rotation: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled(output_size: usize) -> Self {
        Self {
            output_size,
            jitter: false,
            crop: false,
            rotation: false,
            ..Self::default()
        }
    }

    pub fn with_output_size(mut self, output_size: usize) -> Self {
        self.output_size = output_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop scale range ({lo}, {hi}) must lie in (0, 1]"
            )));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::Config("rotation range must be finite".into()));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} jitter {v} must lie in [0, 1]")));
            }
        }
        if self.output_size == 0 {
            return Err(Error::Config("augmentation output size must be positive".into()));
        }
        Ok(())
    }
}

/// Identifies one augmentation draw. Equal keys always produce equal outputs.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey<'a> {
    pub seed: u64,
    pub trajectory: &'a str,
    pub frame: usize,
    pub branch: &'a str,
}

impl StreamKey<'_> {
    fn rng(&self) -> rand_chacha::ChaCha8Rng {
        rng::stream(
            self.seed,
            &[
                b"augment",
                self.trajectory.as_bytes(),
                &(self.frame as u64).to_le_bytes(),
                self.branch.as_bytes(),
            ],
        )
    }
}

/// Resize, then random square crop + rotation, then color jitter; clamped to `[0, 1]`.
pub fn augment_frame(frame: &Frame, cfg: &AugmentConfig, key: &StreamKey<'_>) -> Frame {
    let size = cfg.output_size;
    let base = frame.resize(size);
    if !(cfg.crop || cfg.rotation || cfg.jitter) {
        return base;
    }
    let mut rng = key.rng();
    // Draws happen unconditionally so enabling one transform never shifts another's values.
    let scale: f32 = uniform(&mut rng, cfg.crop_scale.0, cfg.crop_scale.1);
    let (cx_u, cy_u): (f32, f32) = (rng.gen(), rng.gen());
    let angle = uniform(&mut rng, -cfg.rotation_deg, cfg.rotation_deg).to_radians();
    let brightness = uniform(&mut rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
    let contrast = uniform(&mut rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    let saturation = uniform(&mut rng, 1.0 - cfg.saturation, 1.0 + cfg.saturation);

    let mut img = if cfg.crop || cfg.rotation {
        let s = size as f32;
        let (mut side, mut cx, mut cy) = (s, s / 2.0, s / 2.0);
        if cfg.crop {
            side = scale.sqrt() * s;
            if side > s || !side.is_finite() {
                log::warn!("crop window {side:.1}px exceeds the {size}px image; using the full image");
                side = s;
            }
            let free = s - side;
            cx = side / 2.0 + cx_u * free;
            cy = side / 2.0 + cy_u * free;
        }
        let theta = if cfg.rotation { angle } else { 0.0 };
        warp(&base, side, cx, cy, theta)
    } else {
        base
    };
    if cfg.jitter {
        jitter(&mut img, brightness, contrast, saturation);
    }
    img
}

fn uniform(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        // keep the stream position identical regardless of range width
        let _: f32 = rng.gen();
        lo
    }
}

/// Samples a `side`-pixel square centered at `(cx, cy)` and rotated by `theta`
/// back onto the full output grid.
fn warp(src: &Frame, side: f32, cx: f32, cy: f32, theta: f32) -> Frame {
    let size = src.height();
    let n = size * size;
    let (sin, cos) = theta.sin_cos();
    let mut data = vec![0.0f32; 3 * n];
    let mut px = [0.0f32; 3];
    for i in 0..size {
        for j in 0..size {
            let u = ((j as f32 + 0.5) / size as f32 - 0.5) * side;
            let v = ((i as f32 + 0.5) / size as f32 - 0.5) * side;
            let x = cx + cos * u - sin * v;
            let y = cy + sin * u + cos * v;
            src.sample(y, x, &mut px);
            for c in 0..3 {
                data[c * n + i * size + j] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Frame::from_raw_unchecked(size, size, data)
}

fn jitter(img: &mut Frame, brightness: f32, contrast: f32, saturation: f32) {
    let n = img.height() * img.width();
    let mut data = img.data().to_vec();
    for v in &mut data {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let gray = |d: &[f32], i: usize| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i];
    let mean = (0..n).map(|i| gray(&data, i)).sum::<f32>() / n as f32;
    for v in &mut data {
        *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0);
    }
    for i in 0..n {
        let g = gray(&data, i);
        for c in 0..3 {
            let v = &mut data[c * n + i];
            *v = (g + saturation * (*v - g)).clamp(0.0, 1.0);
        }
    }
    *img = Frame::from_raw_unchecked(img.height(), img.width(), data);
}
