//! Multi-channel float images and Lab conversion.

use image::RgbImage;
use palette::{FromColor, Lab, Srgb};

use crate::geometry::Point2;

/// Interleaved `f32` image; row 0 is the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear lookup at a UV (`v` up, pixel centers at half-texel
    /// offsets), clamped to the border. Writes the first `out.len()`
    /// channels.
    pub fn sample(&self, uv: &Point2, out: &mut [f32]) {
        let fx = (uv.x * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = ((1.0 - uv.y) * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let (p00, p10, p01, p11) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        for (c, o) in out.iter_mut().enumerate() {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bottom = p01[c] + (p11[c] - p01[c]) * tx;
            *o = top + (bottom - top) * ty;
        }
    }

    /// Lab image with two extra channels for the luminance gradient per UV
    /// unit (`∂L/∂u`, `∂L/∂v`).
    pub fn lab_from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(w, h, 5);
        for (x, y, p) in img.enumerate_pixels() {
            let lab = rgb_to_lab(p.0);
            out.pixel_mut(x as usize, y as usize)[..3].copy_from_slice(&lab);
        }
        out.update_gradient();
        out
    }

    /// Recomputes channels 3 and 4 from channel 0 by central differences.
    pub fn update_gradient(&mut self) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let dx = (self.pixel(xr, y)[0] - self.pixel(xl, y)[0]) / (xr - xl).max(1) as f32;
                let dy = (self.pixel(x, yd)[0] - self.pixel(x, yu)[0]) / (yd - yu).max(1) as f32;
                let p = self.pixel_mut(x, y);
                p[3] = dx * w as f32;
                p[4] = -dy * h as f32;
            }
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(x as usize, y as usize);
            image::Rgb(lab_to_rgb([p[0], p[1], p[2]]))
        })
    }
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    let lab = Lab::from_color(Srgb::new(rgb[0], rgb[1], rgb[2]).into_format::<f32>());
    [lab.l, lab.a, lab.b]
}

pub fn lab_to_rgb(lab: [f32; 3]) -> [u8; 3] {
    let rgb = Srgb::from_color(Lab::new(lab[0], lab[1], lab[2]));
    let c = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(rgb.red), c(rgb.green), c(rgb.blue)]
}
