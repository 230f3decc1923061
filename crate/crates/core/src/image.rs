//! Grayscale image container plus the loading/resizing used by both the
//! descriptor extractors and the network input path.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Data(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        GrayImage::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Decode a PNG. 8-bit channels scale by 1/255, 16-bit by 1/65535;
    /// color inputs are converted to luma first.
    pub fn load_png(path: &Path) -> Result<Self> {
        let decoded = image::open(path).map_err(|e| {
            Error::Data(format!("cannot read image {}: {e}", path.display()))
        })?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let pixels: Vec<f32> = match decoded {
            image::DynamicImage::ImageLuma8(img) => {
                img.into_raw().iter().map(|&v| v as f32 / 255.0).collect()
            }
            other => {
                let img = other.into_luma16();
                img.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()
            }
        };
        GrayImage::new(h, w, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length checked by construction");
        img.save(path)
            .map_err(|e| Error::Data(format!("cannot write image {}: {e}", path.display())))
    }

    /// Bilinear resample with pixel-center alignment: destination center
    /// (x+0.5) maps to source coordinate (x+0.5)·sw/dw, sampling positions
    /// clamped to the image.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension("resize target must be positive".into()));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let mut out = vec![0.0f32; height * width];
        let sy_scale = self.height as f32 / height as f32;
        let sx_scale = self.width as f32 / width as f32;
        for y in 0..height {
            let sy = ((y as f32 + 0.5) * sy_scale - 0.5).max(0.0);
            let y0 = (sy.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f32;
            for x in 0..width {
                let sx = ((x as f32 + 0.5) * sx_scale - 0.5).max(0.0);
                let x0 = (sx.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f32;
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                out[y * width + x] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
        GrayImage::new(height, width, out)
    }

    /// Replicate the single channel into an `[H, W, 3]` tensor for the
    /// network input path.
    pub fn to_rgb_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.pixels.len() * 3);
        for &v in &self.pixels {
            data.extend_from_slice(&[v, v, v]);
        }
        Tensor::new(vec![self.height, self.width, 3], data)
            .expect("image invariants guarantee a valid tensor")
    }
}
