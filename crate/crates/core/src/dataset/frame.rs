use image::{imageops, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// RGB image with channel-planar `[3, height, width]` float storage in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "frame buffer holds {} values, expected 3 x {height} x {width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("frame value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat(c.clamp(0.0, 1.0)).take(plane));
        }
        Self { height, width, data }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = w * h;
        let mut data = vec![0.0; 3 * plane];
        for (x, y, px) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let plane = self.height * self.width;
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            Rgb(std::array::from_fn(|c| {
                (self.data[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8
            }))
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    /// Square resize with a triangle (bilinear, antialiased) filter.
    /// Returns a clone when the frame already has the requested size.
    pub fn resize(&self, size: usize) -> Frame {
        if self.height == size && self.width == size {
            return self.clone();
        }
        let plane = self.height * self.width;
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let i = y as usize * self.width + x as usize;
                Rgb([self.data[i], self.data[plane + i], self.data[2 * plane + i]])
            });
        let out = imageops::resize(&src, size as u32, size as u32, imageops::FilterType::Triangle);
        let n = size * size;
        let mut data = vec![0.0; 3 * n];
        for (x, y, px) in out.enumerate_pixels() {
            let i = y as usize * size + x as usize;
            for c in 0..3 {
                data[c * n + i] = px[c].clamp(0.0, 1.0);
            }
        }
        Frame {
            height: size,
            width: size,
            data,
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at `i + 0.5`),
    /// replicating the border outside the image.
    pub(crate) fn sample(&self, y: f32, x: f32, out: &mut [f32; 3]) {
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f32);
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f32);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (wy, wx) = (fy - y0 as f32, fx - x0 as f32);
        let plane = self.height * self.width;
        for (c, o) in out.iter_mut().enumerate() {
            let p = &self.data[c * plane..][..plane];
            let top = p[y0 * self.width + x0] * (1.0 - wx) + p[y0 * self.width + x1] * wx;
            let bot = p[y1 * self.width + x0] * (1.0 - wx) + p[y1 * self.width + x1] * wx;
            *o = top * (1.0 - wy) + bot * wy;
        }
    }

    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), 3 * height * width);
        Self { height, width, data }
    }
}

/// Stacks frames into a `[batch, 3, h, w]` buffer. All frames must share one size.
pub fn stack_nchw(frames: &[&Frame]) -> Result<(usize, usize, Vec<f32>)> {
    let Some(first) = frames.first() else {
        return Ok((0, 0, Vec::new()));
    };
    let (h, w) = (first.height, first.width);
    let mut out = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        if f.height != h || f.width != w {
            return Err(Error::Shape(format!(
                "batch mixes frame sizes {h}x{w} and {}x{}",
                f.height, f.width
            )));
        }
        out.extend_from_slice(&f.data);
    }
    Ok((h, w, out))
}
