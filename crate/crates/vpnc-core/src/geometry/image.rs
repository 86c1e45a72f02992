//! Planar image containers for ERP panoramas and extracted viewports.
//!
//! Pixels are interleaved RGB f32 in [0, 1]; PNG I/O converts to and from
//! 8-bit with round-to-nearest. ERP sampling wraps horizontally (longitude
//! is periodic) and clamps vertically; viewport sampling clamps both axes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use image::ImageEncoder;
use std::path::Path;

/// Full equirectangular panorama; `width == 2 * height`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

/// One extracted tangent-plane viewport; dimensions are multiples of 16 so
/// the analysis transform's four stride-2 stages divide evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewportImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

fn validate_rgb(data: &[f32], width: usize, height: usize) -> Result<()> {
    if data.len() != width * height * 3 {
        return Err(Error::invalid(format!(
            "pixel buffer holds {} floats, expected {} for {width}x{height} rgb",
            data.len(),
            width * height * 3
        )));
    }
    if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
        return Err(Error::invalid("pixel values must lie in [0, 1]"));
    }
    Ok(())
}

/// Bilinear lookup on an interleaved RGB buffer. `wrap_x` selects periodic
/// column indexing (ERP longitude); rows always clamp.
fn sample_bilinear(
    data: &[f32],
    width: usize,
    height: usize,
    u: f64,
    v: f64,
    wrap_x: bool,
) -> [f32; 3] {
    let x = u - 0.5;
    let y = v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let col = |xi: i64| -> usize {
        if wrap_x {
            xi.rem_euclid(width as i64) as usize
        } else {
            xi.clamp(0, width as i64 - 1) as usize
        }
    };
    let row = |yi: i64| -> usize { yi.clamp(0, height as i64 - 1) as usize };
    let (x0i, x1i) = (col(x0 as i64), col(x0 as i64 + 1));
    let (y0i, y1i) = (row(y0 as i64), row(y0 as i64 + 1));
    let mut out = [0.0f32; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let p = |xi: usize, yi: usize| data[(yi * width + xi) * 3 + c] as f64;
        let top = p(x0i, y0i) * (1.0 - fx) + p(x1i, y0i) * fx;
        let bot = p(x0i, y1i) * (1.0 - fx) + p(x1i, y1i) * fx;
        *slot = (top * (1.0 - fy) + bot * fy) as f32;
    }
    out
}

fn png_to_rgb(img: image::DynamicImage) -> Vec<f32> {
    img.into_rgb8().into_raw().iter().map(|&b| b as f32 / 255.0).collect()
}

fn rgb_to_png(data: &[f32], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> =
        data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut encoded = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut encoded);
    encoder.write_image(
        &bytes,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    crate::pipeline::atomic_write(path, &encoded)
}

impl ErpImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width != 2 * height || height == 0 {
            return Err(Error::invalid(format!(
                "equirectangular image must be 2:1, got {width}x{height}"
            )));
        }
        validate_rgb(&data, width, height)?;
        Ok(ErpImage { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height * 3])
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, png_to_rgb(img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        rgb_to_png(&self.data, self.width, self.height, path)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        sample_bilinear(&self.data, self.width, self.height, u, v, true)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

impl ViewportImage {
    pub fn validate_dims(width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || width % 16 != 0 || height % 16 != 0 {
            return Err(Error::invalid(format!(
                "viewport dimensions must be nonzero multiples of 16, got {width}x{height}"
            )));
        }
        Ok(())
    }

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::validate_dims(width, height)?;
        validate_rgb(&data, width, height)?;
        Ok(ViewportImage { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::validate_dims(width, height).expect("caller checked viewport dimensions");
        ViewportImage { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(w, h, png_to_rgb(img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        rgb_to_png(&self.data, self.width, self.height, path)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        sample_bilinear(&self.data, self.width, self.height, u, v, false)
    }

    /// Repacks interleaved rows into a planar (3, H, W) tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (w, h) = (self.width, self.height);
        let mut planar = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    planar[c * h * w + y * w + x] = self.data[(y * w + x) * 3 + c];
                }
            }
        }
        Tensor::from_vec(vec![3, h, w], planar)
    }

    /// Inverse of `to_tensor`, clamping decoded values back into [0, 1].
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::invalid(format!("expected (3, h, w) tensor, got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        Self::validate_dims(w, h)?;
        let src = t.data();
        let mut data = vec![0.0f32; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = src[c * h * w + y * w + x].clamp(0.0, 1.0);
                }
            }
        }
        Ok(ViewportImage { width: w, height: h, data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erp_rejects_non_two_to_one() {
        assert!(ErpImage::zeros(100, 100).is_err());
        assert!(ErpImage::zeros(128, 64).is_ok());
    }

    #[test]
    fn viewport_rejects_non_multiple_of_16() {
        assert!(ViewportImage::new(60, 64, vec![0.0; 60 * 64 * 3]).is_err());
        assert!(ViewportImage::new(64, 64, vec![0.0; 64 * 64 * 3]).is_ok());
    }

    #[test]
    fn pixel_center_sampling_is_exact() {
        let mut erp = ErpImage::zeros(8, 4).unwrap();
        erp.set_pixel(3, 2, [0.25, 0.5, 0.75]);
        let got = erp.sample_bilinear(3.5, 2.5);
        assert_eq!(got, [0.25, 0.5, 0.75]);
    }

    #[test]
    fn midpoint_sampling_averages_neighbors() {
        let mut erp = ErpImage::zeros(8, 4).unwrap();
        erp.set_pixel(3, 2, [1.0, 0.0, 0.0]);
        erp.set_pixel(4, 2, [0.0, 0.0, 0.0]);
        let got = erp.sample_bilinear(4.0, 2.5);
        assert!((got[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn erp_sampling_wraps_longitude() {
        let mut erp = ErpImage::zeros(8, 4).unwrap();
        erp.set_pixel(7, 1, [1.0, 1.0, 1.0]);
        erp.set_pixel(0, 1, [0.0, 0.0, 0.0]);
        // u = 8.0 sits halfway between the last and first column centers.
        let got = erp.sample_bilinear(8.0, 1.5);
        assert!((got[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn viewport_sampling_clamps_at_edges() {
        let mut vp = ViewportImage::zeros(16, 16);
        vp.set_pixel(0, 0, [0.75, 0.0, 0.0]);
        let got = vp.sample_bilinear(-5.0, -5.0);
        assert!((got[0] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn tensor_round_trip_preserves_pixels() {
        let mut vp = ViewportImage::zeros(16, 16);
        vp.set_pixel(5, 9, [0.1, 0.2, 0.3]);
        let back = ViewportImage::from_tensor(&vp.to_tensor()).unwrap();
        assert_eq!(vp, back);
    }

    #[test]
    fn png_round_trip_preserves_8bit_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vp.png");
        let mut vp = ViewportImage::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                vp.set_pixel(x, y, [(x as f32) / 15.0, (y as f32) / 15.0, 0.5]);
            }
        }
        // Quantize to the 8-bit grid first so the round trip is exact.
        let quantized = ViewportImage::new(
            16,
            16,
            vp.data().iter().map(|&v| (v * 255.0).round() / 255.0).collect(),
        )
        .unwrap();
        quantized.save_png(&path).unwrap();
        let back = ViewportImage::load_png(&path).unwrap();
        for (a, b) in quantized.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
